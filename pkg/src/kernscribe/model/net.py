"""Hierarchical transcription network.

Pipeline: ConvStack (time-preserving feature extraction) -> unidirectional
GRU encoder -> bar-level GRU decoder with additive attention, which emits a
time-signature and key head per bar and seeds two note-level attention
decoders (lower/upper staff).  Each bar's feedback token concatenates the two
staff summaries (GRUs over the chosen note embeddings) with the chosen
time/key embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from ..errors import NumericsError, VocabularyError
from .config import ModelConfig

STAFFS = ("lower", "upper")

SOS_ID, EOS_ID, PAD_ID = 0, 1, 2


@dataclass
class EncoderOutput:
    outs: Tensor  # (B, T, d) per-frame states
    c: Tensor  # (B, d) content representation = last hidden state


@dataclass
class BatchTargets:
    """Teacher-forcing targets for a batch of clips."""

    time_ids: Tensor  # (B, bars)
    key_ids: Tensor  # (B, bars)
    notes: dict[str, list[Tensor]]  # staff -> per-bar (B, L_bar) PAD-padded, EOS-final


@dataclass
class DecodeResult:
    time_logprobs: Tensor  # (B, bars, |time|)
    key_logprobs: Tensor  # (B, bars, |key|)
    note_logprobs: dict[str, list[Tensor]]  # staff -> per-bar (B, L, |notes|)
    chosen_notes: dict[str, list[Tensor]]  # staff -> per-bar (B, L) argmax ids
    note_inputs: dict[str, list[Tensor]]  # staff -> per-bar (B, L) tokens fed in
    note_lengths: dict[str, Tensor]  # (B, bars) steps taken (free mode: to EOS)
    truncated: dict[str, Tensor]  # (B, bars) bool: hit max_steps without EOS
    chosen_time: Tensor  # (B, bars)
    chosen_key: Tensor  # (B, bars)
    bar_attention: Tensor  # (B, bars, T)
    note_attention: dict[str, list[Tensor]] = field(default_factory=dict)


class ConvStack(nn.Module):
    """Two conv blocks pooling along frequency only; time length is fixed."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2 = cfg.conv_channels
        self.conv1 = nn.Conv2d(1, c1, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, kernel_size=3, padding=1)
        self.pool = nn.MaxPool2d((1, 4))
        self.proj = nn.Linear(c2 * (cfg.freq_bins // 16), cfg.d)

    def forward(self, x: Tensor) -> Tensor:  # (B, T, F) -> (B, T, d)
        if not torch.isfinite(x).all():
            raise NumericsError("non-finite values in spectrogram input")
        x = torch.log1p(x)
        mean = x.mean(dim=(1, 2), keepdim=True)
        std = x.std(dim=(1, 2), keepdim=True)
        x = (x - mean) / (std + 1e-5)
        h = x.unsqueeze(1)
        h = self.pool(F.relu(self.conv1(h)))
        h = self.pool(F.relu(self.conv2(h)))
        h = h.permute(0, 2, 1, 3).flatten(2)
        return self.proj(h)


class AdditiveAttention(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d, bias=False)
        self.score = nn.Linear(d, 1, bias=False)

    def forward(self, h: Tensor, outs: Tensor) -> tuple[Tensor, Tensor]:
        # h (B, d), outs (B, T, d) -> context (B, d), weights (B, T)
        s = self.score(torch.tanh(self.query(h).unsqueeze(1) + self.key(outs)))
        weights = torch.softmax(s.squeeze(-1), dim=-1)
        context = torch.bmm(weights.unsqueeze(1), outs).squeeze(1)
        return context, weights


class HierarchicalTranscriber(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.conv = ConvStack(cfg)
        self.encoder = nn.GRU(cfg.d, cfg.d, batch_first=True)
        self.note_embedding = nn.Embedding(cfg.note_vocab, cfg.note_embed_dim)
        self.time_embedding = nn.Embedding(cfg.time_vocab, cfg.time_embed_dim)
        self.key_embedding = nn.Embedding(cfg.key_vocab, cfg.key_embed_dim)
        self.bar_attn = AdditiveAttention(cfg.d)
        self.bar_cell = nn.GRUCell(cfg.bar_token_dim + cfg.d, cfg.d)
        self.time_head = nn.Linear(2 * cfg.d, cfg.time_vocab)
        self.key_head = nn.Linear(2 * cfg.d, cfg.key_vocab)
        self.note_attn = nn.ModuleDict({s: AdditiveAttention(cfg.d) for s in STAFFS})
        self.note_cell = nn.ModuleDict({
            s: nn.GRUCell(cfg.note_embed_dim + cfg.d, cfg.d) for s in STAFFS})
        self.note_out = nn.ModuleDict({
            s: nn.Linear(cfg.d, cfg.note_vocab) for s in STAFFS})
        self.summarizer = nn.ModuleDict({
            s: nn.GRU(cfg.note_embed_dim, cfg.staff_summary_dim, batch_first=True)
            for s in STAFFS})
        self.bar_token_proj = nn.Linear(
            2 * cfg.staff_summary_dim + cfg.time_embed_dim + cfg.key_embed_dim,
            cfg.bar_token_dim)
        self.bar_token_start = nn.Parameter(torch.randn(cfg.bar_token_dim) * 0.01)

    # -- encoding ---------------------------------------------------------

    def conv_stack(self, spec: Tensor) -> Tensor:
        return self.conv(spec)

    def encode(self, features: Tensor) -> EncoderOutput:
        outs, hidden = self.encoder(features)
        return EncoderOutput(outs=outs, c=hidden[0])

    # -- decoding ---------------------------------------------------------

    def _pick(self, forced: Optional[Tensor], chosen: Tensor, ratio: float,
              generator: Optional[torch.Generator]) -> Tensor:
        """Per-sample choice between ground truth and the model's argmax."""
        if forced is None or ratio <= 0.0:
            return chosen
        if ratio >= 1.0:
            return forced
        coin = torch.rand(chosen.shape[0], generator=generator) < ratio
        return torch.where(coin, forced, chosen)

    def _summarize(self, staff: str, embeddings: Tensor, lengths: Tensor) -> Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            embeddings, lengths.clamp(min=1).cpu(), batch_first=True,
            enforce_sorted=False)
        _, hidden = self.summarizer[staff](packed)
        return hidden[0]

    def _decode_notes(self, staff: str, enc: EncoderOutput, b_i: Tensor,
                      targets: Optional[Tensor], ratio: float,
                      generator: Optional[torch.Generator]):
        batch = b_i.shape[0]
        max_steps = targets.shape[1] if targets is not None else self.cfg.max_steps
        h = b_i
        prev = self.note_embedding(torch.full((batch,), SOS_ID, dtype=torch.long))
        logprobs, chosen_all, inputs_all, attn_all = [], [], [], []
        done = torch.zeros(batch, dtype=torch.bool)
        lengths = torch.zeros(batch, dtype=torch.long)
        for t in range(max_steps):
            context, weights = self.note_attn[staff](h, enc.outs)
            h = self.note_cell[staff](torch.cat([prev, context], dim=-1), h)
            lp = F.log_softmax(self.note_out[staff](h), dim=-1)
            chosen = lp.argmax(dim=-1)
            logprobs.append(lp)
            chosen_all.append(chosen)
            attn_all.append(weights)
            lengths = torch.where(done, lengths, lengths + 1)
            if targets is None:
                done = done | (chosen == EOS_ID)
                nxt = chosen
                if bool(done.all()):
                    inputs_all.append(nxt)
                    break
            else:
                nxt = self._pick(targets[:, t], chosen, ratio, generator)
            inputs_all.append(nxt)
            prev = self.note_embedding(nxt)
        truncated = ~done if targets is None else torch.zeros(batch, dtype=torch.bool)
        return {
            "logprobs": torch.stack(logprobs, dim=1),
            "chosen": torch.stack(chosen_all, dim=1),
            "inputs": torch.stack(inputs_all, dim=1),
            "attention": torch.stack(attn_all, dim=1),
            "lengths": lengths,
            "truncated": truncated,
        }

    def decode(self, enc: EncoderOutput, targets: Optional[BatchTargets] = None,
               ratio: float = 0.0,
               generator: Optional[torch.Generator] = None) -> DecodeResult:
        """Run the fixed bar loop; free-running when targets is None.

        In teacher-forced mode each decoder input is the ground-truth token
        with probability ratio (else the argmax embedding), and note decoders
        run exactly the target length; free-running decodes to EOS or
        max_steps (truncation flagged, not an error).
        """
        cfg = self.cfg
        if targets is not None:
            if int(targets.time_ids.max()) >= cfg.time_vocab or \
               int(targets.key_ids.max()) >= cfg.key_vocab:
                raise VocabularyError("bar-level target id outside vocabulary")
            for staff in STAFFS:
                for t in targets.notes[staff]:
                    if int(t.max()) >= cfg.note_vocab:
                        raise VocabularyError("note target id outside vocabulary")
        batch = enc.c.shape[0]
        h_b = enc.c
        b_token = self.bar_token_start.unsqueeze(0).expand(batch, -1)
        time_lps, key_lps, bar_attn = [], [], []
        chosen_time, chosen_key = [], []
        notes: dict[str, list] = {s: [] for s in STAFFS}
        for i in range(cfg.bars_per_clip):
            a_i, weights = self.bar_attn(h_b, enc.outs)
            h_b = self.bar_cell(torch.cat([b_token, a_i], dim=-1), h_b)
            b_i = h_b
            bar_ctx = torch.cat([b_i, a_i], dim=-1)
            time_lp = F.log_softmax(self.time_head(bar_ctx), dim=-1)
            key_lp = F.log_softmax(self.key_head(bar_ctx), dim=-1)
            time_lps.append(time_lp)
            key_lps.append(key_lp)
            bar_attn.append(weights)
            t_pick = self._pick(
                targets.time_ids[:, i] if targets is not None else None,
                time_lp.argmax(dim=-1), ratio, generator)
            k_pick = self._pick(
                targets.key_ids[:, i] if targets is not None else None,
                key_lp.argmax(dim=-1), ratio, generator)
            chosen_time.append(time_lp.argmax(dim=-1))
            chosen_key.append(key_lp.argmax(dim=-1))
            summaries = []
            for staff in STAFFS:
                staff_targets = targets.notes[staff][i] if targets is not None else None
                result = self._decode_notes(staff, enc, b_i, staff_targets, ratio,
                                            generator)
                notes[staff].append(result)
                summaries.append(self._summarize(
                    staff, self.note_embedding(result["inputs"]), result["lengths"]))
            b_token = self.bar_token_proj(torch.cat(
                summaries + [self.time_embedding(t_pick), self.key_embedding(k_pick)],
                dim=-1))
        return DecodeResult(
            time_logprobs=torch.stack(time_lps, dim=1),
            key_logprobs=torch.stack(key_lps, dim=1),
            note_logprobs={s: [r["logprobs"] for r in notes[s]] for s in STAFFS},
            chosen_notes={s: [r["chosen"] for r in notes[s]] for s in STAFFS},
            note_inputs={s: [r["inputs"] for r in notes[s]] for s in STAFFS},
            note_lengths={s: torch.stack([r["lengths"] for r in notes[s]], dim=1)
                          for s in STAFFS},
            truncated={s: torch.stack([r["truncated"] for r in notes[s]], dim=1)
                       for s in STAFFS},
            chosen_time=torch.stack(chosen_time, dim=1),
            chosen_key=torch.stack(chosen_key, dim=1),
            bar_attention=torch.stack(bar_attn, dim=1),
            note_attention={s: [r["attention"] for r in notes[s]] for s in STAFFS},
        )

    def forward(self, spec: Tensor, targets: Optional[BatchTargets] = None,
                ratio: float = 0.0,
                generator: Optional[torch.Generator] = None) -> DecodeResult:
        enc = self.encode(self.conv(spec))
        return self.decode(enc, targets=targets, ratio=ratio, generator=generator)


def build_model(cfg: ModelConfig) -> HierarchicalTranscriber:
    torch.manual_seed(cfg.rng_seed)
    return HierarchicalTranscriber(cfg)
