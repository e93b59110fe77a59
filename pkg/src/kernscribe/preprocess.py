"""Score cleansing, voice normalization, and 5-bar clip segmentation.

The normalization rules make serialized staffs unambiguous:
  * empty voices (nothing but rests) are dropped,
  * two voices whose slots line up with identical onsets and durations merge
    into one chordal voice,
  * chord members sort ascending by midi,
  * with two voices left, the higher (greater mean midi) voice comes first.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from .errors import UnsupportedVoicingError
from .score import (
    Bar,
    Clip,
    Note,
    NoteEvent,
    Pitch,
    Score,
    Staff,
    Tie,
    Voice,
    bar_length,
)

BARS_PER_CLIP = 5


def _cleanse_voice(voice: Voice, prefer_flats: bool) -> Voice:
    events = []
    for event in voice.events:
        if event.grace:
            continue
        notes = []
        for note in event.notes:
            pitch = note.pitch
            if pitch is not None and abs(pitch.alter) > 1:
                pitch = Pitch.from_midi(pitch.midi, prefer_flats=prefer_flats)
            notes.append(Note(pitch, note.tie, ()))
        events.append(NoteEvent(event.onset, event.duration, tuple(notes)))
    return Voice(tuple(events))


def cleanse(score: Score) -> Score:
    """Drop grace notes and editorial decorations; timed content is untouched.

    Double accidentals are respelled to the bar key's preferred single
    accidental (same midi) since the token vocabulary excludes them.
    """
    staffs = {}
    for name in ("lower", "upper"):
        bars = []
        for b, bar in enumerate(score.staff(name).bars):
            prefer_flats = score.per_bar_key[b].sharps < 0
            bars.append(Bar(tuple(_cleanse_voice(v, prefer_flats) for v in bar.voices)))
        staffs[name] = Staff(tuple(bars))
    return Score(staffs["lower"], staffs["upper"], score.per_bar_key, score.per_bar_time)


def _slots_parallel(a: Voice, b: Voice) -> bool:
    if len(a.events) != len(b.events):
        return False
    return all(
        ea.onset == eb.onset and ea.duration == eb.duration and ea.grace == eb.grace
        for ea, eb in zip(a.events, b.events))


def _merge_voices(a: Voice, b: Voice) -> Voice:
    merged = []
    for ea, eb in zip(a.events, b.events):
        heads = [n for n in ea.notes + eb.notes if not n.is_rest]
        if not heads:
            merged.append(NoteEvent(ea.onset, ea.duration, (Note(None),), grace=ea.grace))
            continue
        merged.append(NoteEvent(ea.onset, ea.duration, _sorted_chord(heads), grace=ea.grace))
    return Voice(tuple(merged))


def _sorted_chord(heads: list[Note]) -> tuple[Note, ...]:
    """Ascending by midi; unison duplicates collapse to the first spelling."""
    out: list[Note] = []
    for note in sorted(heads, key=lambda n: n.pitch.midi):
        if out and out[-1].pitch.midi == note.pitch.midi:
            continue
        out.append(note)
    return tuple(out)


def _voice_mean_midi(voice: Voice) -> float:
    midis = [n.pitch.midi for e in voice.events for n in e.notes if n.pitch is not None]
    return sum(midis) / len(midis) if midis else float("-inf")


def _voice_midi_seq(voice: Voice) -> list[int]:
    return [n.pitch.midi for e in voice.events for n in e.notes if n.pitch is not None]


def _order_two_voices(voices: list[Voice]) -> list[Voice]:
    a, b = voices
    ma, mb = _voice_mean_midi(a), _voice_mean_midi(b)
    if ma > mb:
        return [a, b]
    if mb > ma:
        return [b, a]
    # Mean tie: first differing note head decides; still equal keeps order.
    for x, y in zip(_voice_midi_seq(a), _voice_midi_seq(b)):
        if x != y:
            return [a, b] if x > y else [b, a]
    return [a, b]


def _normalize_bar(bar: Bar, bar_index: int) -> Bar:
    voices = [v for v in bar.voices if not v.is_empty]
    if not voices:
        voices = list(bar.voices[:1])
    # Merge any pair with identical slot timing until no pair merges.
    merged = True
    while merged and len(voices) > 1:
        merged = False
        for i in range(len(voices)):
            for j in range(i + 1, len(voices)):
                if _slots_parallel(voices[i], voices[j]):
                    voices[i] = _merge_voices(voices[i], voices[j])
                    del voices[j]
                    merged = True
                    break
            if merged:
                break
    if len(voices) > 2:
        raise UnsupportedVoicingError(
            f"bar {bar_index} has {len(voices)} non-mergeable voices", bar_index=bar_index)
    voices = [
        Voice(tuple(
            NoteEvent(e.onset, e.duration,
                      e.notes if e.is_rest else _sorted_chord(list(e.notes)),
                      grace=e.grace)
            for e in v.events))
        for v in voices]
    if len(voices) == 2:
        voices = _order_two_voices(voices)
    return Bar(tuple(voices))


def normalize_voices(staff: Staff) -> Staff:
    """Normalize each bar to at most two well-ordered voices (idempotent)."""
    return Staff(tuple(_normalize_bar(bar, i) for i, bar in enumerate(staff.bars)))


def normalize_score(score: Score) -> Score:
    return Score(normalize_voices(score.lower), normalize_voices(score.upper),
                 score.per_bar_key, score.per_bar_time)


def _truncate_boundary_ties(staff: Staff, times) -> Staff:
    """Cut tie chains entering/leaving the clip at its boundary."""
    bars = list(staff.bars)

    def remap(bar: Bar, first: bool, length: Fraction) -> Bar:
        voices = []
        for voice in bar.voices:
            events = []
            for e in voice.events:
                notes = e.notes
                if first and not e.grace and e.onset == 0:
                    notes = tuple(
                        Note(n.pitch, {Tie.STOP: Tie.NONE, Tie.CONTINUE: Tie.START}.get(n.tie, n.tie), n.marks)
                        for n in notes)
                if not first and not e.grace and e.onset + e.duration.whole == length:
                    notes = tuple(
                        Note(n.pitch, {Tie.START: Tie.NONE, Tie.CONTINUE: Tie.STOP}.get(n.tie, n.tie), n.marks)
                        for n in notes)
                events.append(NoteEvent(e.onset, e.duration, notes, grace=e.grace))
            voices.append(Voice(tuple(events)))
        return Bar(tuple(voices))

    bars[0] = remap(bars[0], True, bar_length(times[0]))
    last = len(bars) - 1
    bars[last] = remap(bars[last], False, bar_length(times[last]))
    return Staff(tuple(bars))


def segment_clips(score: Score, source_id: str = "") -> list[Clip]:
    """Cut a score into consecutive non-overlapping 5-bar clips.

    The trailing remainder shorter than 5 bars is discarded; fewer than 5
    bars yields an empty list.  Ties across a clip boundary are truncated so
    each clip is self-contained.
    """
    clips = []
    for start in range(0, score.bar_count - BARS_PER_CLIP + 1, BARS_PER_CLIP):
        window = slice(start, start + BARS_PER_CLIP)
        times = score.per_bar_time[window]
        lower = _truncate_boundary_ties(Staff(score.lower.bars[window]), times)
        upper = _truncate_boundary_ties(Staff(score.upper.bars[window]), times)
        clip_score = Score(lower, upper, score.per_bar_key[window], times)
        clips.append(Clip(clip_score, source_id=source_id, start_bar_index=start))
    return clips


@dataclass(frozen=True)
class VoiceCountReport:
    """Bar-level voice-count histogram per staff, plus the <=2-voice share."""

    lower: dict[int, int]
    upper: dict[int, int]
    fraction_le2_lower: float
    fraction_le2_upper: float

    def as_dict(self) -> dict:
        return {
            "lower": {str(k): v for k, v in sorted(self.lower.items())},
            "upper": {str(k): v for k, v in sorted(self.upper.items())},
            "fraction_le2_lower": self.fraction_le2_lower,
            "fraction_le2_upper": self.fraction_le2_upper,
        }


def count_voices_per_bar(score: Score) -> VoiceCountReport:
    """Histogram raw (pre-normalization) voice counts per staff per bar."""
    counts = {"lower": Counter(), "upper": Counter()}
    for name in ("lower", "upper"):
        for bar in score.staff(name).bars:
            counts[name][len(bar.voices)] += 1
    fractions = {}
    for name in ("lower", "upper"):
        total = sum(counts[name].values())
        le2 = sum(v for k, v in counts[name].items() if k <= 2)
        fractions[name] = le2 / total if total else 1.0
    return VoiceCountReport(dict(counts["lower"]), dict(counts["upper"]),
                            fractions["lower"], fractions["upper"])
