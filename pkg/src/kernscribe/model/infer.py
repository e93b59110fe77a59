"""Greedy transcription from a spectrogram to labels, tokens, and a Score."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from ..score import KeySignature, Score, TimeSignature
from ..tokens import EOS, NEWLINE, SOS, TokenSequence, Vocabulary, try_deserialize
from .net import EOS_ID, STAFFS, HierarchicalTranscriber


@dataclass
class Transcription:
    times: list[str]  # 5 time-signature labels
    keys: list[int]  # 5 sharps counts
    tokens: dict[str, list[str]]  # staff -> full token stream incl SOS/EOS
    bar_tokens: dict[str, list[list[str]]]  # staff -> 5 per-bar token lists
    valid: dict[str, bool]
    grammar_errors: dict[str, Optional[str]] = field(default_factory=dict)
    truncated: dict[str, list[bool]] = field(default_factory=dict)
    score: Optional[Score] = None

    def as_dict(self) -> dict:
        return {
            "times": self.times,
            "keys": self.keys,
            "tokens_lower": self.bar_tokens["lower"],
            "tokens_upper": self.bar_tokens["upper"],
            "valid_lower": self.valid["lower"],
            "valid_upper": self.valid["upper"],
            "grammar_errors": self.grammar_errors,
            "truncated": self.truncated,
        }


def _staff_sequence(bar_tokens: list[list[str]]) -> TokenSequence:
    flat = [SOS]
    for tokens in bar_tokens:
        flat.extend(tokens)
    flat.append(EOS)
    return TokenSequence(tuple(flat))


def transcribe(model: HierarchicalTranscriber, vocab: Vocabulary,
               spectrogram: np.ndarray) -> Transcription:
    """Free-running argmax decode of one clip.

    Output always holds exactly bars_per_clip time and key labels; token
    streams that violate the serialization grammar are flagged, never fatal.
    """
    model.eval()
    with torch.no_grad():
        spec = torch.from_numpy(np.asarray(spectrogram)).float().unsqueeze(0)
        result = model(spec)
    times = [vocab.time.token(int(i)) for i in result.chosen_time[0]]
    keys = [int(vocab.key.token(int(i))) for i in result.chosen_key[0]]
    bar_tokens: dict[str, list[list[str]]] = {}
    truncated: dict[str, list[bool]] = {}
    for staff in STAFFS:
        bars = []
        for b in range(model.cfg.bars_per_clip):
            ids = result.chosen_notes[staff][b][0].tolist()
            length = int(result.note_lengths[staff][0, b])
            ids = ids[:length]
            if ids and ids[-1] == EOS_ID:
                ids = ids[:-1]
            bars.append(vocab.note.decode(ids))
        bar_tokens[staff] = bars
        truncated[staff] = [bool(x) for x in result.truncated[staff][0]]
    time_sigs = tuple(TimeSignature.from_label(t) for t in times)
    staffs = {}
    valid = {}
    errors = {}
    for staff in STAFFS:
        decoded, err = try_deserialize(_staff_sequence(bar_tokens[staff]), time_sigs)
        staffs[staff] = decoded
        valid[staff] = err is None
        errors[staff] = err
    score = None
    if staffs["lower"] is not None and staffs["upper"] is not None:
        score = Score(staffs["lower"], staffs["upper"],
                      tuple(KeySignature(k) for k in keys), time_sigs)
    return Transcription(times=times, keys=keys,
                         tokens={s: list(_staff_sequence(bar_tokens[s]).tokens)
                                 for s in STAFFS},
                         bar_tokens=bar_tokens, valid=valid,
                         grammar_errors=errors, truncated=truncated, score=score)
