"""Backward-pass verification against central finite differences."""

from __future__ import annotations

import random
from dataclasses import dataclass

import torch

from .config import ModelConfig
from .net import EOS_ID, STAFFS, BatchTargets, HierarchicalTranscriber
from .training import compute_losses


def tiny_config(note_vocab: int = 20) -> ModelConfig:
    return ModelConfig(
        note_vocab=note_vocab, d=8, note_embed_dim=6, time_embed_dim=3,
        key_embed_dim=3, staff_summary_dim=5, bar_token_dim=7,
        conv_channels=(2, 3), freq_bins=32, bars_per_clip=5, max_steps=6,
        rng_seed=0)


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: dict[str, float]
    tolerance: float
    step: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _make_inputs(cfg: ModelConfig, frames: int, seed: int):
    gen = torch.Generator().manual_seed(seed)
    spec = torch.rand(1, frames, cfg.freq_bins, generator=gen, dtype=torch.float64)
    rng = random.Random(seed)
    notes = {}
    for staff in STAFFS:
        per_bar = []
        for _ in range(cfg.bars_per_clip):
            length = rng.randint(2, cfg.max_steps - 1)
            ids = [rng.randrange(3, cfg.note_vocab) for _ in range(length)] + [EOS_ID]
            per_bar.append(torch.tensor([ids], dtype=torch.long))
        notes[staff] = per_bar
    targets = BatchTargets(
        time_ids=torch.tensor([[rng.randrange(cfg.time_vocab)
                                for _ in range(cfg.bars_per_clip)]]),
        key_ids=torch.tensor([[rng.randrange(cfg.key_vocab)
                               for _ in range(cfg.bars_per_clip)]]),
        notes=notes)
    return spec, targets


def grad_check(config: ModelConfig | None = None, tolerance: float = 1e-4,
               step: float = 1e-5, samples_per_param: int = 2,
               frames: int = 6, seed: int = 0) -> GradCheckReport:
    """Compare autograd gradients to central differences, in float64.

    Teacher forcing ratio 1.0 keeps the loss a smooth function of the
    parameters (no argmax feedback), so the O(h^2) central-difference
    truncation model applies.
    """
    cfg = config or tiny_config()
    torch.manual_seed(seed)
    model = HierarchicalTranscriber(cfg).double()
    spec, targets = _make_inputs(cfg, frames, seed)

    def loss_value() -> torch.Tensor:
        outputs = model(spec, targets=targets, ratio=1.0)
        return compute_losses(outputs, targets).l_total

    model.zero_grad()
    loss_value().backward()
    rng = random.Random(seed + 1)
    per_param: dict[str, float] = {}
    for name, param in model.named_parameters():
        flat = param.detach().reshape(-1)
        grad = param.grad.detach().reshape(-1) if param.grad is not None else None
        picks = rng.sample(range(flat.numel()), min(samples_per_param, flat.numel()))
        worst = 0.0
        for idx in picks:
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + step
                high = loss_value().item()
                flat[idx] = original - step
                low = loss_value().item()
                flat[idx] = original
            fd = (high - low) / (2 * step)
            analytic = grad[idx].item() if grad is not None else 0.0
            denom = max(abs(analytic), abs(fd))
            err = abs(analytic - fd) if denom < 1e-8 else abs(analytic - fd) / denom
            worst = max(worst, err)
        per_param[name] = worst
    return GradCheckReport(
        max_rel_error=max(per_param.values()),
        per_parameter=per_param,
        tolerance=tolerance,
        step=step)
