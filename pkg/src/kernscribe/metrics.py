"""Transcription evaluation: WER, macro-F1, and the MV2H-lite score suite.

MV2H-lite is a bar-aligned simplification of the multi-aspect transcription
metric: both inputs are 5-bar clips, so notes are matched on exact rational
(bar, onset, midi) instead of real-time alignment, and the harmony term
compares per-bar key signatures only.  Tie chains count as one note with the
summed duration.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .errors import InputError
from .score import Score, Staff, Tie, bar_length


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    """Levenshtein distance with unit costs (two-row dynamic program)."""
    if len(hyp) < len(ref):
        hyp, ref = ref, hyp
    previous = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        current = [i]
        for j, r in enumerate(ref, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (h != r),
            ))
        previous = current
    return previous[-1]


def wer(hyp: Sequence[str], ref: Sequence[str]) -> float:
    """Token error rate: edit distance / reference length (specials stripped
    by the caller); may exceed 1 with many insertions."""
    if len(ref) == 0:
        raise InputError("empty reference sequence: WER undefined")
    return edit_distance(hyp, ref) / len(ref)


def macro_f1(preds: Sequence, refs: Sequence,
             classes: Optional[Sequence] = None) -> float:
    """Unweighted mean of per-class F1 over classes with any support.

    A class absent from both predictions and references is excluded; a
    supported class with no true positives contributes 0.
    """
    if len(preds) != len(refs):
        raise InputError(f"length mismatch: {len(preds)} predictions vs {len(refs)} references")
    if classes is None:
        classes = sorted(set(preds) | set(refs), key=str)
    scores = []
    for cls in classes:
        tp = sum(1 for p, r in zip(preds, refs) if p == cls and r == cls)
        fp = sum(1 for p, r in zip(preds, refs) if p == cls and r != cls)
        fn = sum(1 for p, r in zip(preds, refs) if p != cls and r == cls)
        if tp + fp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores) if scores else 0.0


def confusion_counts(preds: Sequence, refs: Sequence) -> dict[tuple, int]:
    if len(preds) != len(refs):
        raise InputError("length mismatch in confusion counts")
    return dict(Counter(zip(refs, preds)))


@dataclass(frozen=True)
class _SoundingNote:
    """A tie-collapsed note: global onset, summed duration, pitch, voice id."""

    onset: Fraction
    duration: Fraction
    midi: int
    bar: int
    voice: tuple[int, int]  # (staff index, running voice id)


def _collapse_staff(staff: Staff, times, staff_index: int) -> list[_SoundingNote]:
    notes: list[_SoundingNote] = []
    open_chains: dict[tuple[int, int], _SoundingNote] = {}  # (midi, voice) -> chain head
    bar_offset = Fraction(0)
    for b, bar in enumerate(staff.bars):
        for v, voice in enumerate(bar.voices):
            for event in voice.sounding:
                if event.is_rest:
                    continue
                onset = bar_offset + event.onset
                for head in event.notes:
                    midi = head.pitch.midi
                    key = (midi, v)
                    chain = open_chains.pop(key, None)
                    joined = chain is not None and chain.onset + chain.duration == onset
                    if joined and head.tie in (Tie.STOP, Tie.CONTINUE):
                        merged = _SoundingNote(chain.onset,
                                               chain.duration + event.duration.whole,
                                               midi, chain.bar, chain.voice)
                    else:
                        if chain is not None:
                            notes.append(chain)
                        merged = _SoundingNote(onset, event.duration.whole, midi, b,
                                               (staff_index, v))
                    if head.tie in (Tie.START, Tie.CONTINUE):
                        open_chains[key] = merged
                    else:
                        notes.append(merged)
        bar_offset += bar_length(times[b])
    notes.extend(open_chains.values())
    return notes


def _collapse(score: Score) -> list[_SoundingNote]:
    return (_collapse_staff(score.lower, score.per_bar_time, 0)
            + _collapse_staff(score.upper, score.per_bar_time, 1))


def _voice_links(notes: list[_SoundingNote]) -> Counter:
    """Ordered links between note heads of adjacent onsets within a voice."""
    by_voice: dict[tuple, dict[Fraction, list[_SoundingNote]]] = {}
    for n in notes:
        by_voice.setdefault(n.voice, {}).setdefault(n.onset, []).append(n)
    links: Counter = Counter()
    for slots in by_voice.values():
        onsets = sorted(slots)
        for a, b in zip(onsets, onsets[1:]):
            for left in slots[a]:
                for right in slots[b]:
                    links[((left.onset, left.midi), (right.onset, right.midi))] += 1
    return links


@dataclass
class Mv2hResult:
    f_p: float
    f_voi: float
    f_val: float
    f_harm: float

    @property
    def f_mv2h(self) -> float:
        return (self.f_p + self.f_voi + self.f_val + self.f_harm) / 4.0


def mv2h_lite(hyp: Score, ref: Score) -> Mv2hResult:
    """Multi-pitch / voice / note-value / harmony F-scores for 5-bar clips.

    Notes match one-to-one on equal (bar, onset, midi); F_p is the matched
    F-measure, F_voi the F-measure over consecutive same-voice links among
    matched notes, F_val the fraction of matched notes with equal duration,
    F_harm the fraction of bars with the correct key signature.
    """
    if hyp.bar_count != ref.bar_count:
        raise InputError(
            f"bar count mismatch: hyp {hyp.bar_count} vs ref {ref.bar_count}")
    hyp_notes = _collapse(hyp)
    ref_notes = _collapse(ref)

    def keyed(notes):
        table: dict[tuple, list[_SoundingNote]] = {}
        for n in notes:
            table.setdefault((n.onset, n.midi), []).append(n)
        return table

    hyp_table = keyed(hyp_notes)
    ref_table = keyed(ref_notes)
    matched = 0
    val_hits = 0
    matched_keys = set()
    for key, ref_group in ref_table.items():
        hyp_group = hyp_table.get(key, [])
        m = min(len(ref_group), len(hyp_group))
        if m == 0:
            continue
        matched += m
        matched_keys.add(key)
        ref_durs = sorted(n.duration for n in ref_group)[:m]
        hyp_durs = sorted(n.duration for n in hyp_group)[:m]
        val_hits += sum(1 for a, b in zip(hyp_durs, ref_durs) if a == b)
    total = len(hyp_notes) + len(ref_notes)
    f_p = 2 * matched / total if total else 1.0
    f_val = val_hits / matched if matched else (1.0 if total == 0 else 0.0)

    def matched_links(notes):
        links = _voice_links(notes)
        return Counter({pair: c for pair, c in links.items()
                        if pair[0] in matched_keys and pair[1] in matched_keys})

    hyp_links = matched_links(hyp_notes)
    ref_links = matched_links(ref_notes)
    common = sum((hyp_links & ref_links).values())
    n_hyp_links = sum(hyp_links.values())
    n_ref_links = sum(ref_links.values())
    if n_hyp_links + n_ref_links == 0:
        f_voi = 1.0
    else:
        f_voi = 2 * common / (n_hyp_links + n_ref_links)

    harm_hits = sum(1 for a, b in zip(hyp.per_bar_key, ref.per_bar_key) if a == b)
    f_harm = harm_hits / ref.bar_count if ref.bar_count else 1.0
    return Mv2hResult(f_p=f_p, f_voi=f_voi, f_val=f_val, f_harm=f_harm)


@dataclass
class ClipEval:
    clip_id: str
    dist_lower: int
    dist_upper: int
    len_lower: int
    len_upper: int
    mv2h: Mv2hResult
    error: Optional[str] = None


@dataclass
class EvalReport:
    """Corpus-level evaluation summary.

    WER pools edit distances over pooled reference lengths; macro-F1 pools
    all bar labels; MV2H-lite sub-metrics average over clips and their mean
    is exactly the arithmetic mean of the four reported values.
    """

    wer_lower: float
    wer_upper: float
    wer_overall: float
    f_key: float
    f_time: float
    f_p: float
    f_voi: float
    f_val: float
    f_harm: float
    key_confusion: dict[tuple, int] = field(default_factory=dict)
    time_confusion: dict[tuple, int] = field(default_factory=dict)
    clip_errors: list[str] = field(default_factory=list)
    clips: int = 0

    @property
    def f_mv2h(self) -> float:
        return (self.f_p + self.f_voi + self.f_val + self.f_harm) / 4.0

    def as_dict(self) -> dict:
        return {
            "clips": self.clips,
            "wer_lower": self.wer_lower,
            "wer_upper": self.wer_upper,
            "wer_overall": self.wer_overall,
            "f_key": self.f_key,
            "f_time": self.f_time,
            "f_p": self.f_p,
            "f_voi": self.f_voi,
            "f_val": self.f_val,
            "f_harm": self.f_harm,
            "f_mv2h": self.f_mv2h,
            "key_confusion": [
                {"true_label": str(t), "pred_label": str(p), "count": c}
                for (t, p), c in sorted(self.key_confusion.items(), key=str)],
            "time_confusion": [
                {"true_label": str(t), "pred_label": str(p), "count": c}
                for (t, p), c in sorted(self.time_confusion.items(), key=str)],
            "clip_errors": self.clip_errors,
            "note": "MV2H-lite: bar-aligned simplification; exact rational onset "
                    "matching, key-only harmony, no automatic alignment",
        }


def evaluate_clips(pairs: list[tuple[str, Score, Score]],
                   serializer) -> EvalReport:
    """Evaluate (clip_id, hyp, ref) score pairs.

    serializer(staff, times) must return the stripped token body used for
    WER (the tokenizer's serialize_staff piped through strip_specials).
    """
    dists = {"lower": 0, "upper": 0}
    lens = {"lower": 0, "upper": 0}
    key_preds, key_refs, time_preds, time_refs = [], [], [], []
    mv2h_acc = {"f_p": 0.0, "f_voi": 0.0, "f_val": 0.0, "f_harm": 0.0}
    errors = []
    counted = 0
    for clip_id, hyp, ref in pairs:
        try:
            for staff in ("lower", "upper"):
                hyp_tokens = serializer(hyp.staff(staff), hyp.per_bar_time)
                ref_tokens = serializer(ref.staff(staff), ref.per_bar_time)
                if not ref_tokens:
                    raise InputError(f"{clip_id}: empty reference for {staff}")
                dists[staff] += edit_distance(hyp_tokens, ref_tokens)
                lens[staff] += len(ref_tokens)
            result = mv2h_lite(hyp, ref)
        except InputError as exc:
            errors.append(f"{clip_id}: {exc}")
            continue
        counted += 1
        for name in mv2h_acc:
            mv2h_acc[name] += getattr(result, name)
        key_preds.extend(k.sharps for k in hyp.per_bar_key)
        key_refs.extend(k.sharps for k in ref.per_bar_key)
        time_preds.extend(t.label for t in hyp.per_bar_time)
        time_refs.extend(t.label for t in ref.per_bar_time)
    if counted == 0:
        raise InputError("no evaluable clips" + (f" ({errors[0]})" if errors else ""))
    return EvalReport(
        wer_lower=dists["lower"] / lens["lower"],
        wer_upper=dists["upper"] / lens["upper"],
        wer_overall=(dists["lower"] + dists["upper"]) / (lens["lower"] + lens["upper"]),
        f_key=macro_f1(key_preds, key_refs),
        f_time=macro_f1(time_preds, time_refs),
        f_p=mv2h_acc["f_p"] / counted,
        f_voi=mv2h_acc["f_voi"] / counted,
        f_val=mv2h_acc["f_val"] / counted,
        f_harm=mv2h_acc["f_harm"] / counted,
        key_confusion=confusion_counts(key_preds, key_refs),
        time_confusion=confusion_counts(time_preds, time_refs),
        clip_errors=errors,
        clips=counted,
    )
