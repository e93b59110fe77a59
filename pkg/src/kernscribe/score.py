"""In-memory model of two-staff piano scores.

A Score is a pair of staffs (lower/upper) holding bars, each bar holding one
or more voices, each voice an ordered, gapless list of timed slots (note,
chord, or rest).  Durations and onsets are exact rationals in whole notes so
rhythm arithmetic is never subject to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterator, Optional

from .errors import VocabularyError

MIDI_MIN = 21
MIDI_MAX = 108

KEY_SHARPS_MIN = -6
KEY_SHARPS_MAX = 7

STEP_PITCH_CLASS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_PC_TO_STEP = {v: k for k, v in STEP_PITCH_CLASS.items()}

# Supported time signature vocabulary (numerator, denominator).
TIME_SIGNATURES = ((4, 4), (3, 4), (2, 4), (6, 8), (2, 2), (12, 8), (3, 8))

# Kern reciprocal durations: 1 = whole ... 64 = sixty-fourth, 0-2 dots each.
RECIPROCALS = (1, 2, 4, 8, 16, 32, 64)
MAX_DOTS = 2


class Tie(Enum):
    NONE = "none"
    START = "start"
    CONTINUE = "continue"
    STOP = "stop"


@dataclass(frozen=True)
class Pitch:
    """Spelled pitch: step letter, accidental offset, scientific octave."""

    step: str
    alter: int
    octave: int

    def __post_init__(self):
        if self.step not in STEP_PITCH_CLASS:
            raise ValueError(f"bad step {self.step!r}")
        if not -2 <= self.alter <= 2:
            raise ValueError(f"alter {self.alter} outside -2..2")

    @property
    def midi(self) -> int:
        return 12 * (self.octave + 1) + STEP_PITCH_CLASS[self.step] + self.alter

    @property
    def pitch_class(self) -> int:
        return self.midi % 12

    @classmethod
    def from_midi(cls, midi: int, prefer_flats: bool = False) -> "Pitch":
        """Spell a midi number with at most one accidental.

        Naturals spell plainly; black keys take the flat spelling when
        prefer_flats else the sharp spelling.
        """
        pc = midi % 12
        octave = midi // 12 - 1
        if pc in _PC_TO_STEP:
            return cls(_PC_TO_STEP[pc], 0, octave)
        if prefer_flats:
            upper = (pc + 1) % 12
            step = _PC_TO_STEP[upper]
            # Flat of C lives an octave up (Cb4 is midi 59 in octave 4).
            if upper == 0:
                octave += 1
            return cls(step, -1, octave)
        lower = (pc - 1) % 12
        step = _PC_TO_STEP[lower]
        if lower == 11:
            octave -= 1
        return cls(step, 1, octave)


def _dotted(base: Fraction, dots: int) -> Fraction:
    return base * (2 ** (dots + 1) - 1) / 2**dots


_REPRESENTABLE: dict[Fraction, tuple[int, int]] = {}
for _r in RECIPROCALS:
    for _d in range(MAX_DOTS + 1):
        _REPRESENTABLE.setdefault(_dotted(Fraction(1, _r), _d), (_r, _d))


@dataclass(frozen=True)
class Duration:
    """Note value as an exact fraction of a whole note.

    Only values expressible as a Kern reciprocal with 0-2 augmentation dots
    are representable (e.g. 3/8 = dotted quarter = "4.").
    """

    whole: Fraction

    def __post_init__(self):
        if self.whole not in _REPRESENTABLE:
            raise ValueError(f"duration {self.whole} not reciprocal+dots representable")

    @classmethod
    def from_kern(cls, reciprocal: int, dots: int = 0) -> "Duration":
        if reciprocal not in RECIPROCALS:
            raise ValueError(f"unsupported reciprocal {reciprocal}")
        if not 0 <= dots <= MAX_DOTS:
            raise ValueError(f"unsupported dot count {dots}")
        return cls(_dotted(Fraction(1, reciprocal), dots))

    @property
    def reciprocal(self) -> int:
        return _REPRESENTABLE[self.whole][0]

    @property
    def dots(self) -> int:
        return _REPRESENTABLE[self.whole][1]

    def kern_string(self) -> str:
        return str(self.reciprocal) + "." * self.dots


def representable_durations() -> tuple[Fraction, ...]:
    """All whole-note values the duration model admits, ascending."""
    return tuple(sorted(_REPRESENTABLE))


@dataclass(frozen=True)
class Note:
    """One note head: a pitch (or None for a rest) plus tie state and marks.

    marks carries ignorable notation decorations (beams, stems, editorial
    accidentals...) until cleansing discards them.
    """

    pitch: Optional[Pitch]
    tie: Tie = Tie.NONE
    marks: tuple[str, ...] = ()

    @property
    def is_rest(self) -> bool:
        return self.pitch is None


@dataclass(frozen=True)
class NoteEvent:
    """One temporal slot in a voice: a single note, a chord, or a rest.

    Chords are slots with >= 2 heads sharing the slot's onset and duration.
    Grace slots carry a notational duration but occupy no time.
    """

    onset: Fraction
    duration: Duration
    notes: tuple[Note, ...]
    grace: bool = False

    def __post_init__(self):
        if not self.notes:
            raise ValueError("event needs at least one note head")
        if len(self.notes) > 1 and any(n.is_rest for n in self.notes):
            raise ValueError("rests cannot be chord members")

    @property
    def is_rest(self) -> bool:
        return self.notes[0].is_rest

    @property
    def end(self) -> Fraction:
        return self.onset if self.grace else self.onset + self.duration.whole


@dataclass(frozen=True)
class Voice:
    events: tuple[NoteEvent, ...] = ()

    @property
    def sounding(self) -> tuple[NoteEvent, ...]:
        """Timed (non-grace) slots."""
        return tuple(e for e in self.events if not e.grace)

    @property
    def is_empty(self) -> bool:
        """No events, or nothing but rests."""
        return all(e.is_rest for e in self.sounding) and not any(
            e.grace for e in self.events
        )


@dataclass(frozen=True)
class Bar:
    voices: tuple[Voice, ...] = ()


@dataclass(frozen=True)
class Staff:
    bars: tuple[Bar, ...] = ()

    @property
    def bar_count(self) -> int:
        return len(self.bars)


@dataclass(frozen=True)
class KeySignature:
    """Number of sharps in the signature; flats are negative (-6..7)."""

    sharps: int


@dataclass(frozen=True)
class TimeSignature:
    numerator: int
    denominator: int

    @property
    def label(self) -> str:
        return f"{self.numerator}/{self.denominator}"

    @classmethod
    def from_label(cls, label: str) -> "TimeSignature":
        num, _, den = label.partition("/")
        return cls(int(num), int(den))


def bar_length(ts: TimeSignature) -> Fraction:
    """Bar duration in whole notes; only the supported vocabulary is legal."""
    if (ts.numerator, ts.denominator) not in TIME_SIGNATURES:
        raise VocabularyError(f"unsupported time signature {ts.label}")
    return Fraction(ts.numerator, ts.denominator)


@dataclass(frozen=True)
class Score:
    lower: Staff
    upper: Staff
    per_bar_key: tuple[KeySignature, ...]
    per_bar_time: tuple[TimeSignature, ...]

    def __post_init__(self):
        n = len(self.lower.bars)
        if not (len(self.upper.bars) == len(self.per_bar_key) == len(self.per_bar_time) == n):
            raise ValueError(
                "inconsistent lengths: lower=%d upper=%d keys=%d times=%d"
                % (n, len(self.upper.bars), len(self.per_bar_key), len(self.per_bar_time))
            )

    @property
    def bar_count(self) -> int:
        return len(self.lower.bars)

    def staff(self, name: str) -> Staff:
        if name == "lower":
            return self.lower
        if name == "upper":
            return self.upper
        raise ValueError(f"unknown staff {name!r}")


@dataclass(frozen=True)
class Clip:
    """A 5-bar window of a score, the transcription unit."""

    score: Score
    source_id: str = ""
    start_bar_index: int = 0

    def __post_init__(self):
        if self.score.bar_count != 5:
            raise ValueError(f"clip must hold 5 bars, got {self.score.bar_count}")


@dataclass(frozen=True)
class Violation:
    """One broken invariant: which bar/staff and which rule."""

    bar: Optional[int]
    staff: Optional[str]
    rule: str
    detail: str = ""

    def __str__(self):
        where = []
        if self.staff is not None:
            where.append(self.staff)
        if self.bar is not None:
            where.append(f"bar {self.bar}")
        prefix = " ".join(where)
        return f"{prefix}: {self.rule} ({self.detail})" if prefix else f"{self.rule} ({self.detail})"


def _check_voice(voice: Voice, bar_idx: int, staff: str, length: Fraction,
                 is_pickup: bool, out: list[Violation]):
    cursor = Fraction(0)
    for event in voice.sounding:
        if event.onset != cursor:
            out.append(Violation(bar_idx, staff, "voice-contiguity",
                                 f"event at {event.onset}, expected {cursor}"))
            cursor = event.onset
        cursor = event.onset + event.duration.whole
    if cursor > length:
        out.append(Violation(bar_idx, staff, "bar-duration-sum",
                             f"voice spans {cursor} > bar length {length}"))
    elif cursor != length and not is_pickup:
        out.append(Violation(bar_idx, staff, "bar-duration-sum",
                             f"voice spans {cursor} != bar length {length}"))
    for event in voice.events:
        midis = [n.pitch.midi for n in event.notes if n.pitch is not None]
        for m in midis:
            if not MIDI_MIN <= m <= MIDI_MAX:
                out.append(Violation(bar_idx, staff, "pitch-range", f"midi {m}"))
        if len(midis) > 1 and any(a >= b for a, b in zip(midis, midis[1:])):
            out.append(Violation(bar_idx, staff, "chord-order",
                                 f"chord midis {midis} not strictly ascending"))


def validate(score: Score) -> list[Violation]:
    """Check every model invariant; violations are data, not exceptions.

    Bar 0 may be an under-full pickup bar; every other bar must be filled
    exactly by each of its voices.
    """
    out: list[Violation] = []
    for bar_idx in range(score.bar_count):
        ts = score.per_bar_time[bar_idx]
        if (ts.numerator, ts.denominator) not in TIME_SIGNATURES:
            out.append(Violation(bar_idx, None, "time-signature-vocabulary", ts.label))
            continue
        sharps = score.per_bar_key[bar_idx].sharps
        if not KEY_SHARPS_MIN <= sharps <= KEY_SHARPS_MAX:
            out.append(Violation(bar_idx, None, "key-signature-range", str(sharps)))
        length = bar_length(ts)
        for staff_name in ("lower", "upper"):
            bar = score.staff(staff_name).bars[bar_idx]
            if not bar.voices:
                out.append(Violation(bar_idx, staff_name, "bar-voice-count", "no voices"))
                continue
            for voice in bar.voices:
                _check_voice(voice, bar_idx, staff_name, length, bar_idx == 0, out)
    return out


def iter_events(staff: Staff) -> Iterator[tuple[int, int, NoteEvent]]:
    """Yield (bar_index, voice_index, event) over a staff in document order."""
    for b, bar in enumerate(staff.bars):
        for v, voice in enumerate(bar.voices):
            for event in voice.events:
                yield b, v, event
