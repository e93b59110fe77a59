"""Multi-task loss, dataset assembly, and the deterministic training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from ..errors import ConfigError, VocabularyError
from ..tokens import Vocabulary
from ..vqt import load_spectrogram
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainSchedule, teacher_forcing_ratio
from .net import (
    PAD_ID,
    STAFFS,
    BatchTargets,
    DecodeResult,
    HierarchicalTranscriber,
    build_model,
)


@dataclass
class ClipExample:
    """One training/evaluation unit: spectrogram plus per-bar targets."""

    clip_id: str
    spectrogram: np.ndarray  # (T, F) magnitudes
    time_ids: list[int]  # len == bars
    key_ids: list[int]
    note_ids: dict[str, list[list[int]]]  # staff -> per-bar ids, EOS-terminated


@dataclass
class LossParts:
    l_key: Tensor
    l_time: Tensor
    l_lower: Tensor
    l_upper: Tensor

    @property
    def l_total(self) -> Tensor:
        return self.l_key + self.l_time + self.l_lower + self.l_upper


@dataclass
class TrainStepReport:
    step: int
    epoch: int
    l_key: float
    l_time: float
    l_lower: float
    l_upper: float
    l_total: float
    grad_norm: float
    teacher_forcing_ratio: float

    def as_dict(self) -> dict:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "l_key": self.l_key,
            "l_time": self.l_time,
            "l_lower": self.l_lower,
            "l_upper": self.l_upper,
            "l_total": self.l_total,
            "grad_norm": self.grad_norm,
            "ratio": self.teacher_forcing_ratio,
        }


def _label_nll(logprobs: Tensor, targets: Tensor) -> Tensor:
    """Mean NLL over all positions of (B, N, V) vs (B, N)."""
    if int(targets.max()) >= logprobs.shape[-1] or int(targets.min()) < 0:
        raise VocabularyError("label target id outside vocabulary")
    picked = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -picked.mean()


def _note_nll(per_bar_logprobs: Sequence[Tensor], per_bar_targets: Sequence[Tensor],
              pad_id: int = PAD_ID) -> Tensor:
    """Mean NLL over non-PAD note positions pooled across bars."""
    total = None
    count = 0
    for lp, tgt in zip(per_bar_logprobs, per_bar_targets):
        if int(tgt.max()) >= lp.shape[-1] or int(tgt.min()) < 0:
            raise VocabularyError("note target id outside vocabulary")
        mask = tgt != pad_id
        picked = lp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)
        contrib = -(picked * mask).sum()
        total = contrib if total is None else total + contrib
        count += int(mask.sum())
    if count == 0:
        return torch.zeros(())
    return total / count


def compute_losses(outputs: DecodeResult, targets: BatchTargets) -> LossParts:
    """Per-subtask NLL (PAD masked); total is the plain sum of the four."""
    return LossParts(
        l_key=_label_nll(outputs.key_logprobs, targets.key_ids),
        l_time=_label_nll(outputs.time_logprobs, targets.time_ids),
        l_lower=_note_nll(outputs.note_logprobs["lower"], targets.notes["lower"]),
        l_upper=_note_nll(outputs.note_logprobs["upper"], targets.notes["upper"]),
    )


def collate(examples: Sequence[ClipExample], bars: int) -> tuple[Tensor, BatchTargets]:
    """Stack clips into one batch; spectrogram frame counts must agree."""
    frames = {e.spectrogram.shape for e in examples}
    if len(frames) != 1:
        raise ConfigError(f"cannot batch clips with differing spectrogram shapes {frames}")
    spec = torch.from_numpy(np.stack([e.spectrogram for e in examples])).float()
    time_ids = torch.tensor([e.time_ids for e in examples], dtype=torch.long)
    key_ids = torch.tensor([e.key_ids for e in examples], dtype=torch.long)
    notes: dict[str, list[Tensor]] = {}
    for staff in STAFFS:
        per_bar = []
        for b in range(bars):
            seqs = [e.note_ids[staff][b] for e in examples]
            width = max(len(s) for s in seqs)
            arr = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
            for i, s in enumerate(seqs):
                arr[i, : len(s)] = torch.tensor(s, dtype=torch.long)
            per_bar.append(arr)
        notes[staff] = per_bar
    return spec, BatchTargets(time_ids=time_ids, key_ids=key_ids, notes=notes)


def example_from_manifest_line(line: dict, vocab: Vocabulary,
                               root: Optional[Path] = None) -> ClipExample:
    """Decode one JSON-lines manifest record into a ClipExample.

    Expected fields: id, spectrogram (container prefix), tokens_lower /
    tokens_upper (5 per-bar token arrays, no specials), keys (5 sharps),
    times (5 labels like "4/4").
    """
    prefix = Path(line["spectrogram"])
    if root is not None and not prefix.is_absolute():
        prefix = root / prefix
    spec = load_spectrogram(prefix)
    note_ids = {}
    for staff, field in (("lower", "tokens_lower"), ("upper", "tokens_upper")):
        bars = []
        for bar_tokens in line[field]:
            bars.append(vocab.note.encode(list(bar_tokens)) + [vocab.eos_id])
        note_ids[staff] = bars
    return ClipExample(
        clip_id=line["id"],
        spectrogram=spec.data,
        time_ids=vocab.time.encode([str(t) for t in line["times"]]),
        key_ids=vocab.key.encode([str(k) for k in line["keys"]]),
        note_ids=note_ids,
    )


def load_manifest(path, vocab: Vocabulary) -> list[ClipExample]:
    root = Path(path).parent
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            raw = raw.strip()
            if raw:
                examples.append(example_from_manifest_line(json.loads(raw), vocab, root))
    return examples


@dataclass
class TrainResult:
    checkpoint_path: Optional[Path]
    trace: list[TrainStepReport]
    model: HierarchicalTranscriber


def train(examples: Sequence[ClipExample], config: ModelConfig,
          schedule: TrainSchedule, stage: str, seed: int,
          vocab_hash: str, out_dir: Optional[Path] = None,
          init_checkpoint: Optional[Path] = None) -> TrainResult:
    """Teacher-forced training; bit-deterministic for a fixed seed.

    Pretraining decays the forcing ratio 0.7 * 0.99^epoch; fine-tuning holds
    0.6 and must start from a checkpoint whose vocabulary hash matches.
    """
    if stage not in ("pretrain", "finetune"):
        raise ConfigError(f"unknown stage {stage!r}")
    if not examples:
        raise ConfigError("empty training set")
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    if init_checkpoint is not None:
        model, _ = load_checkpoint(init_checkpoint, expected_vocab_hash=vocab_hash)
    else:
        if stage == "finetune":
            raise ConfigError("finetune requires an initial checkpoint")
        model = build_model(config)
    longest = max(len(s) for e in examples for staff in STAFFS
                  for s in e.note_ids[staff])
    if longest > model.cfg.max_steps:
        raise ConfigError(
            f"max_steps {model.cfg.max_steps} < longest target {longest}")
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    generator = torch.Generator().manual_seed(seed)
    batches = [list(range(i, min(i + schedule.batch_size, len(examples))))
               for i in range(0, len(examples), schedule.batch_size)]
    trace: list[TrainStepReport] = []
    step = 0
    model.train()
    for epoch in range(schedule.epochs):
        ratio = teacher_forcing_ratio(stage, epoch, schedule)
        for batch_idx in batches:
            spec, targets = collate([examples[i] for i in batch_idx],
                                    model.cfg.bars_per_clip)
            outputs = model(spec, targets=targets, ratio=ratio, generator=generator)
            parts = compute_losses(outputs, targets)
            optimizer.zero_grad()
            parts.l_total.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(
                model.parameters(), schedule.grad_clip)
            optimizer.step()
            trace.append(TrainStepReport(
                step=step, epoch=epoch,
                l_key=float(parts.l_key), l_time=float(parts.l_time),
                l_lower=float(parts.l_lower), l_upper=float(parts.l_upper),
                l_total=float(parts.l_total), grad_norm=float(grad_norm),
                teacher_forcing_ratio=ratio))
            step += 1
    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = save_checkpoint(
            out_dir / f"{stage}.ckpt", model, vocab_hash,
            meta={"stage": stage, "steps": step, "seed": seed})
        with open(out_dir / f"{stage}_trace.jsonl", "w", encoding="utf-8") as f:
            for report in trace:
                f.write(json.dumps(report.as_dict(), sort_keys=True) + "\n")
    return TrainResult(checkpoint_path=checkpoint_path, trace=trace, model=model)
