"""Staff serialization to token streams and back, plus the vocabularies.

Serialization scheme (per staff, voice structure preserved, no `*^`/`*v`):
  * a record is one time slice; every record ends with a "\\n" token,
  * two-voice records carry exactly one "\\t" between the voice groups,
  * chord members are separated by "<b>"; each member is duration token(s)
    followed by the pitch token (or "r"), with tie tokens "[", "]", "_"
    hugging the member,
  * a voice whose previous event is still sounding emits the continuation
    token "." (the same vocabulary entry doubles as the augmentation dot
    after a duration token; position disambiguates),
  * bar boundaries carry no token: durations against the per-bar time
    signatures locate them.

An under-full first bar (pickup) would be ambiguous to decode, so
serialize_staff pads trailing gaps with explicit rests when the time
signatures are supplied; fully notated scores are unaffected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .errors import DecodeError, TokenizeError, VocabularyError
from .kern import kern_pitch_name, reinsert_identifiers  # noqa: F401  (re-export)
from .score import (
    Bar,
    Duration,
    KEY_SHARPS_MAX,
    KEY_SHARPS_MIN,
    MIDI_MAX,
    MIDI_MIN,
    Note,
    NoteEvent,
    Pitch,
    RECIPROCALS,
    Staff,
    Tie,
    TimeSignature,
    TIME_SIGNATURES,
    Voice,
    bar_length,
    representable_durations,
)

SOS = "<sos>"
EOS = "<eos>"
PAD = "<pad>"
SPECIALS = (SOS, EOS, PAD)

TAB = "\t"
NEWLINE = "\n"
CHORD_SEP = "<b>"
CONTINUATION = "."  # also the augmentation dot after a duration token
REST = "r"
TIE_START = "["
TIE_STOP = "]"
TIE_CONT = "_"

DURATION_TOKENS = tuple(str(r) for r in RECIPROCALS)

_STEP_FOR_PC = {0: "C", 2: "D", 4: "E", 5: "F", 7: "G", 9: "A", 11: "B"}


def _pitch_tokens() -> tuple[str, ...]:
    """Every single-accidental spelling of midi 21..108, deterministic order."""
    out = []
    for midi in range(MIDI_MIN, MIDI_MAX + 1):
        for alter in (0, -1, 1):
            base = midi - alter
            pc = base % 12
            if pc in _STEP_FOR_PC:
                pitch = Pitch(_STEP_FOR_PC[pc], alter, base // 12 - 1)
                out.append(kern_pitch_name(pitch))
    return tuple(out)


class VocabMap:
    """Dense bidirectional token <-> id map."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str):
        return token in self.index

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} not in vocabulary") from None

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabularyError(f"id {idx} outside vocabulary of {len(self.tokens)}")
        return self.tokens[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.token(i) for i in ids]


class Vocabulary:
    """Note, time-signature, and key-signature vocabularies."""

    def __init__(self, note_tokens: Sequence[str], time_tokens: Sequence[str],
                 key_tokens: Sequence[str]):
        if tuple(note_tokens[:3]) != SPECIALS:
            raise VocabularyError("note vocabulary must start with <sos>,<eos>,<pad>")
        self.note = VocabMap(note_tokens)
        self.time = VocabMap(time_tokens)
        self.key = VocabMap(key_tokens)

    @property
    def sos_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def pad_id(self) -> int:
        return 2

    def to_payload(self) -> dict:
        return {
            "note_tokens": list(self.note.tokens),
            "time_tokens": list(self.time.tokens),
            "key_tokens": list(self.key.tokens),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Vocabulary":
        return cls(payload["note_tokens"], payload["time_tokens"], payload["key_tokens"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_payload(), f, ensure_ascii=False, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_payload(json.load(f))

    def content_hash(self) -> str:
        blob = json.dumps(self.to_payload(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_vocabulary() -> Vocabulary:
    note_tokens = (
        list(SPECIALS)
        + [TAB, NEWLINE, CHORD_SEP, CONTINUATION, REST, TIE_START, TIE_STOP, TIE_CONT]
        + list(DURATION_TOKENS)
        + list(_pitch_tokens())
    )
    time_tokens = [f"{n}/{d}" for n, d in TIME_SIGNATURES]
    key_tokens = [str(s) for s in range(KEY_SHARPS_MIN, KEY_SHARPS_MAX + 1)]
    return Vocabulary(note_tokens, time_tokens, key_tokens)


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    staff_tag: str = "lower"

    def __iter__(self):
        return iter(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def body(self) -> tuple[str, ...]:
        """Tokens without SOS/EOS/PAD."""
        return strip_specials(self.tokens)


def strip_specials(tokens: Sequence[str]) -> tuple[str, ...]:
    return tuple(t for t in tokens if t not in SPECIALS)


def _member_tokens(event: NoteEvent, note: Note) -> list[str]:
    out = []
    if note.tie is Tie.START:
        out.append(TIE_START)
    out.append(str(event.duration.reciprocal))
    out.extend(["."] * event.duration.dots)
    if note.pitch is None:
        out.append(REST)
    else:
        if abs(note.pitch.alter) > 1:
            raise TokenizeError(
                f"pitch {kern_pitch_name(note.pitch)} has a double accidental; cleanse first")
        out.append(kern_pitch_name(note.pitch))
    if note.tie is Tie.STOP:
        out.append(TIE_STOP)
    elif note.tie is Tie.CONTINUE:
        out.append(TIE_CONT)
    return out


def _event_tokens(event: NoteEvent) -> list[str]:
    if event.grace:
        raise TokenizeError("grace notes are not serializable; cleanse first")
    out: list[str] = []
    for i, note in enumerate(event.notes):
        if i:
            out.append(CHORD_SEP)
        out.extend(_member_tokens(event, note))
    return out


def _pad_voice(events: tuple[NoteEvent, ...], length: Fraction) -> tuple[NoteEvent, ...]:
    end = max((e.end for e in events), default=Fraction(0))
    if end >= length:
        return events
    extra = []
    cursor = end
    for d in sorted(representable_durations(), reverse=True):
        while cursor + d <= length:
            extra.append(NoteEvent(cursor, Duration(d), (Note(None),)))
            cursor += d
    if cursor != length:
        raise TokenizeError(f"cannot pad bar gap of {length - cursor}")
    return events + tuple(extra)


def serialize_bar_tokens(bar: Bar, length: Optional[Fraction] = None) -> list[str]:
    """Token stream for one bar (record-terminating newlines included)."""
    if not 1 <= len(bar.voices) <= 2:
        raise TokenizeError(f"bar has {len(bar.voices)} voices; normalize first")
    voices = [v.events for v in bar.voices]
    if length is not None:
        voices = [_pad_voice(v, length) for v in voices]
    onsets = sorted({e.onset for v in voices for e in v})
    out: list[str] = []
    for t in onsets:
        for vi, events in enumerate(voices):
            if vi:
                out.append(TAB)
            hit = next((e for e in events if e.onset == t), None)
            if hit is None:
                out.append(CONTINUATION)
            else:
                out.extend(_event_tokens(hit))
        out.append(NEWLINE)
    return out


def serialize_staff(staff: Staff, bars: int = 5, staff_tag: str = "lower",
                    times: Optional[Sequence[TimeSignature]] = None) -> TokenSequence:
    """Serialize a normalized staff: SOS, then each bar's records, then EOS."""
    if staff.bar_count != bars:
        raise TokenizeError(f"expected {bars} bars, staff has {staff.bar_count}")
    tokens: list[str] = [SOS]
    for i, bar in enumerate(staff.bars):
        length = bar_length(times[i]) if times is not None else None
        tokens.extend(serialize_bar_tokens(bar, length))
    tokens.append(EOS)
    return TokenSequence(tuple(tokens), staff_tag)


def _parse_member_tokens(tokens: list[str], pos: int) -> tuple[Duration, Note, int]:
    """Parse one chord member starting at pos; returns (duration, note, new pos)."""
    tie = Tie.NONE
    if pos < len(tokens) and tokens[pos] == TIE_START:
        tie = Tie.START
        pos += 1
    if pos >= len(tokens) or tokens[pos] not in DURATION_TOKENS:
        found = tokens[pos] if pos < len(tokens) else "<end>"
        raise DecodeError(f"expected duration token, found {found!r}", position=pos,
                          reason="pitch before duration" if _is_pitch(found) else "missing duration")
    reciprocal = int(tokens[pos])
    pos += 1
    dots = 0
    while pos < len(tokens) and tokens[pos] == CONTINUATION:
        dots += 1
        pos += 1
    if dots > 2:
        raise DecodeError("more than two augmentation dots", position=pos)
    duration = Duration.from_kern(reciprocal, dots)
    if pos >= len(tokens):
        raise DecodeError("duration without pitch", position=pos)
    tok = tokens[pos]
    if tok == REST:
        pitch = None
    elif _is_pitch(tok):
        pitch = _parse_pitch_token(tok, pos)
    else:
        raise DecodeError(f"expected pitch or rest, found {tok!r}", position=pos)
    pos += 1
    if pos < len(tokens) and tokens[pos] in (TIE_STOP, TIE_CONT):
        if pitch is None:
            raise DecodeError("tie on a rest", position=pos)
        stop = tokens[pos] == TIE_STOP
        if tie is Tie.START:
            tie = Tie.CONTINUE if not stop else Tie.NONE
        else:
            tie = Tie.STOP if stop else Tie.CONTINUE
        pos += 1
    return duration, Note(pitch, tie), pos


def _is_pitch(token: str) -> bool:
    return bool(token) and token[0] in "abcdefgABCDEFG"


def _parse_pitch_token(token: str, pos: int) -> Pitch:
    letters = ""
    alter = 0
    for ch in token:
        if ch in "abcdefgABCDEFG":
            if alter:
                raise DecodeError(f"malformed pitch token {token!r}", position=pos)
            letters += ch
        elif ch == "#":
            alter += 1
        elif ch == "-":
            alter -= 1
        else:
            raise DecodeError(f"malformed pitch token {token!r}", position=pos)
    if not letters or letters != letters[0] * len(letters):
        raise DecodeError(f"malformed pitch token {token!r}", position=pos)
    octave = 3 + len(letters) if letters[0].islower() else 4 - len(letters)
    return Pitch(letters[0].upper(), alter, octave)


def _split_record(tokens: list[str], base: int) -> list[list[tuple[int, str]]]:
    groups: list[list[tuple[int, str]]] = [[]]
    for off, tok in enumerate(tokens):
        if tok == TAB:
            groups.append([])
        else:
            groups[-1].append((base + off, tok))
    return groups


def deserialize_staff(seq: TokenSequence | Sequence[str],
                      times: Sequence[TimeSignature]) -> Staff:
    """Exact inverse of serialize_staff on its image.

    Bar boundaries are recovered by accumulating durations against the given
    time signatures; any grammar violation raises DecodeError with the token
    position.
    """
    tokens = list(seq.tokens if isinstance(seq, TokenSequence) else seq)
    if not tokens or tokens[0] != SOS or tokens[-1] != EOS:
        raise DecodeError("sequence must be boxed by <sos>/<eos>", position=0)
    if any(t == PAD for t in tokens):
        raise DecodeError("interior PAD token", position=tokens.index(PAD))
    body = tokens[1:-1]

    bars: list[Bar] = []
    voice_events: list[list[NoteEvent]] = []
    cums: list[Fraction] = []
    bar_len: Fraction = Fraction(0)

    def start_bar(n_voices: int):
        nonlocal voice_events, cums, bar_len
        if len(bars) >= len(times):
            raise DecodeError("more bars than time signatures", position=pos0)
        bar_len = bar_length(times[len(bars)])
        voice_events = [[] for _ in range(n_voices)]
        cums = [Fraction(0)] * n_voices

    def close_bar():
        bars.append(Bar(tuple(Voice(tuple(ev)) for ev in voice_events)))

    record: list[str] = []
    pos0 = 0
    in_bar = False
    for pos, tok in enumerate(body):
        if tok != NEWLINE:
            record.append(tok)
            continue
        if not record:
            raise DecodeError("empty record", position=pos)
        groups = _split_record(record, pos0)
        if len(groups) > 2:
            raise DecodeError("more than two voices in a record", position=pos0)
        if any(not g for g in groups):
            raise DecodeError("dangling voice separator", position=pos0)
        if not in_bar:
            start_bar(len(groups))
            in_bar = True
        elif len(groups) != len(cums):
            raise DecodeError("voice count changed mid-bar", position=pos0)
        row_time = min(cums)
        if all(len(g) == 1 and g[0][1] == CONTINUATION for g in groups):
            raise DecodeError("record with only continuation tokens", position=pos0)
        for vi, group in enumerate(groups):
            gpos = [p for p, _ in group]
            gtok = [t for _, t in group]
            if gtok == [CONTINUATION]:
                if cums[vi] == row_time:
                    raise DecodeError("continuation where an event is due",
                                      position=gpos[0])
                continue
            if cums[vi] != row_time:
                raise DecodeError("event in a voice that is still sounding",
                                  position=gpos[0])
            members: list[tuple[Duration, Note]] = []
            i = 0
            while i < len(gtok):
                if members:
                    if gtok[i] != CHORD_SEP:
                        raise DecodeError(f"expected {CHORD_SEP!r} between chord members",
                                          position=gpos[i])
                    i += 1
                    if i >= len(gtok):
                        raise DecodeError("dangling chord separator", position=gpos[-1])
                dur, note, i = _parse_member_tokens(gtok, i)
                members.append((dur, note))
            durations = {d for d, _ in members}
            if len(durations) != 1:
                raise DecodeError("chord members disagree on duration", position=gpos[0])
            notes = tuple(n for _, n in members)
            if len(notes) > 1 and any(n.is_rest for n in notes):
                raise DecodeError("rest inside a chord", position=gpos[0])
            duration = members[0][0]
            if cums[vi] + duration.whole > bar_len:
                raise DecodeError("duration overflows the bar", position=gpos[0])
            voice_events[vi].append(NoteEvent(cums[vi], duration, notes))
            cums[vi] += duration.whole
        record = []
        pos0 = pos + 1
        if in_bar and all(c == bar_len for c in cums):
            close_bar()
            in_bar = False
    if record:
        raise DecodeError("unterminated record before <eos>", position=len(body))
    if in_bar:
        raise DecodeError("incomplete final bar", position=len(body))
    if len(bars) != len(times):
        raise DecodeError(f"decoded {len(bars)} bars, expected {len(times)}",
                          position=len(body))
    return Staff(tuple(bars))


def try_deserialize(seq, times) -> tuple[Optional[Staff], Optional[str]]:
    """Lenient wrapper for model output: (staff, None) or (None, reason)."""
    try:
        return deserialize_staff(seq, times), None
    except DecodeError as exc:
        return None, str(exc)
