"""**Kern text parsing and writing for two-staff piano scores.

The parser handles the cleansed feature set this pipeline consumes: notes
(duration + pitch + dots + accidentals + ties), rests, chords (space
separated), barlines, spine splits/merges (`*^` / `*v`), key and time
interpretations, and `*-` terminators.  Everything else (clefs, instrument
interpretations, comments, layout decorations inside note tokens) is kept as
ignorable annotations.

Spine topology: a file must open with exactly two `**kern` spines; the left
spine tree is the lower staff, the right the upper.  After a split the left
sub-spine is the continuation of the parent voice (and, on write, the higher
voice of the staff).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import ParseError, SemanticError, UnsupportedVoicingError
from .score import (
    Bar,
    Duration,
    KeySignature,
    Note,
    NoteEvent,
    Pitch,
    RECIPROCALS,
    Score,
    Staff,
    Tie,
    TimeSignature,
    Voice,
    bar_length,
)

# Notation decorations we strip into Note.marks instead of rejecting.
_MARK_CHARS = set("/\\LJKkjMmTtWwSsuU$R:;,'`\"^~&()xXyYzZ@+|<>oOpPNiI")

_SHARP_ORDER = ("f#", "c#", "g#", "d#", "a#", "e#", "b#")
_FLAT_ORDER = ("b-", "e-", "a-", "d-", "g-", "c-", "f-")

_TIME_RE = re.compile(r"^\*M(\d+)/(\d+)$")
_KEY_RE = re.compile(r"^\*k\[([a-gA-G#n\-]*)\]$")


@dataclass(frozen=True)
class SpineEvent:
    """Parsed data token of one spine: a null placeholder or a timed event."""

    null: bool
    duration: Optional[Duration] = None
    notes: tuple[Note, ...] = ()
    grace: bool = False
    text: str = "."


@dataclass(frozen=True)
class Record:
    """One structural line of a **Kern document."""

    line_no: int
    kind: str  # exclusive | interp | spine_op | barline | data | terminator
    tokens: tuple[str, ...]
    events: Optional[tuple[SpineEvent, ...]] = None
    key: Optional[KeySignature] = None
    time: Optional[TimeSignature] = None


@dataclass
class RawKernDocument:
    """Record stream plus spine bookkeeping.

    staff_maps[i] gives, for record i, the staff index (0 lower / 1 upper)
    of each spine active at that record; spine_ops indexes the `*^`/`*v`
    records.  Comments and unrecognized interpretations live in annotations.
    """

    records: list[Record] = field(default_factory=list)
    staff_maps: list[tuple[int, ...]] = field(default_factory=list)
    spine_ops: list[int] = field(default_factory=list)
    annotations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def initial_spines(self) -> int:
        return len(self.staff_maps[0]) if self.staff_maps else 0

    @property
    def terminal_spines(self) -> int:
        return len(self.staff_maps[-1]) if self.staff_maps else 0


def kern_pitch_name(pitch: Pitch) -> str:
    """Kern spelling: letter repetition encodes the octave, then accidentals."""
    if pitch.octave >= 4:
        name = pitch.step.lower() * (pitch.octave - 3)
    else:
        name = pitch.step.upper() * (4 - pitch.octave)
    if pitch.alter > 0:
        name += "#" * pitch.alter
    elif pitch.alter < 0:
        name += "-" * (-pitch.alter)
    return name


def key_signature_token(key: KeySignature) -> str:
    if key.sharps > 0:
        return "*k[" + "".join(_SHARP_ORDER[: key.sharps]) + "]"
    if key.sharps < 0:
        return "*k[" + "".join(_FLAT_ORDER[: -key.sharps]) + "]"
    return "*k[]"


def _parse_member(member: str, line_no: int) -> tuple[Optional[Duration], Note, bool]:
    """Parse one chord member into (duration, note head, grace flag)."""
    digits = ""
    dots = 0
    letters = ""
    alter = 0
    rest = False
    grace = False
    tie_start = tie_stop = tie_cont = False
    marks: list[str] = []
    for ch in member:
        if ch.isdigit():
            if letters or rest:
                raise ParseError(f"unexpected digit after pitch in {member!r}", line_no)
            digits += ch
        elif ch == ".":
            dots += 1
        elif ch in "abcdefgABCDEFG":
            if rest:
                raise ParseError(f"pitch letter in rest token {member!r}", line_no)
            letters += ch
        elif ch == "#":
            alter += 1
        elif ch == "-":
            alter -= 1
        elif ch == "n":
            if not letters:
                raise ParseError(f"stray natural sign in {member!r}", line_no)
            marks.append("n")
        elif ch == "r":
            if letters:
                raise ParseError(f"rest marker after pitch in {member!r}", line_no)
            rest = True
        elif ch == "[":
            tie_start = True
        elif ch == "]":
            tie_stop = True
        elif ch == "_":
            tie_cont = True
        elif ch in "qQ":
            grace = True
        elif ch in _MARK_CHARS:
            marks.append(ch)
        else:
            raise ParseError(f"unknown character {ch!r} in token {member!r}", line_no)

    duration: Optional[Duration] = None
    if digits:
        reciprocal = int(digits)
        if reciprocal not in RECIPROCALS:
            raise ParseError(f"unsupported duration {digits!r} in {member!r}", line_no)
        if dots > 2:
            raise ParseError(f"more than two dots in {member!r}", line_no)
        duration = Duration.from_kern(reciprocal, dots)
    elif not grace:
        raise ParseError(f"note token {member!r} has no duration", line_no)

    if rest:
        if tie_start or tie_stop or tie_cont:
            raise ParseError(f"tie on rest in {member!r}", line_no)
        return duration, Note(None, Tie.NONE, tuple(marks)), grace

    if not letters:
        raise ParseError(f"token {member!r} has neither pitch nor rest", line_no)
    if letters != letters[0] * len(letters):
        raise ParseError(f"mixed pitch letters in {member!r}", line_no)
    if letters[0].islower():
        octave = 3 + len(letters)
    else:
        octave = 4 - len(letters)
    if not -2 <= alter <= 2:
        raise ParseError(f"accidental out of range in {member!r}", line_no)
    if tie_cont:
        tie = Tie.CONTINUE
    elif tie_start and tie_stop:
        tie = Tie.NONE
    elif tie_start:
        tie = Tie.START
    elif tie_stop:
        tie = Tie.STOP
    else:
        tie = Tie.NONE
    pitch = Pitch(letters[0].upper(), alter, octave)
    return duration, Note(pitch, tie, tuple(marks)), grace


def _parse_data_token(token: str, line_no: int) -> SpineEvent:
    if token == ".":
        return SpineEvent(null=True)
    members = [m for m in token.split(" ") if m]
    if not members:
        raise ParseError(f"empty data token {token!r}", line_no)
    parsed = [_parse_member(m, line_no) for m in members]
    durations = {p[0] for p in parsed}
    if len(durations) != 1:
        raise ParseError(f"chord members disagree on duration in {token!r}", line_no)
    graces = {p[2] for p in parsed}
    if len(graces) != 1:
        raise ParseError(f"chord mixes grace and normal notes in {token!r}", line_no)
    notes = tuple(p[1] for p in parsed)
    if len(notes) > 1 and any(n.is_rest for n in notes):
        raise ParseError(f"rest inside chord in {token!r}", line_no)
    grace = parsed[0][2]
    duration = parsed[0][0] if parsed[0][0] is not None else Duration.from_kern(8)
    return SpineEvent(null=False, duration=duration, notes=notes, grace=grace, text=token)


def _apply_spine_ops(tokens: tuple[str, ...], staff_map: tuple[int, ...],
                     line_no: int) -> tuple[int, ...]:
    new: list[int] = []
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t == "*^":
            new.extend((staff_map[i], staff_map[i]))
            i += 1
        elif t == "*v":
            j = i
            while j < len(tokens) and tokens[j] == "*v":
                j += 1
            if j - i != 2:
                raise ParseError(f"`*v` run of {j - i}; exactly two adjacent spines may merge",
                                 line_no)
            if staff_map[i] != staff_map[i + 1]:
                raise ParseError("cannot merge spines across staffs", line_no)
            new.append(staff_map[i])
            i = j
        elif t == "*":
            new.append(staff_map[i])
            i += 1
        else:
            raise ParseError(f"unexpected token {t!r} in spine-op record", line_no)
    return tuple(new)


def _extract_key_time(tokens: tuple[str, ...], line_no: int,
                      annotations: list[tuple[int, str]]):
    key = None
    time = None
    for t in tokens:
        m = _KEY_RE.match(t)
        if m:
            body = m.group(1)
            sharps = body.count("#")
            flats = body.count("-")
            if sharps and flats:
                raise ParseError(f"key signature mixes sharps and flats: {t!r}", line_no)
            found = KeySignature(sharps if sharps else -flats)
            if key is not None and found != key:
                raise SemanticError(f"conflicting key signatures across spines", line_no)
            key = found
            continue
        m = _TIME_RE.match(t)
        if m:
            found_t = TimeSignature(int(m.group(1)), int(m.group(2)))
            if time is not None and found_t != time:
                raise SemanticError("conflicting time signatures across spines", line_no)
            time = found_t
            continue
        if t != "*":
            annotations.append((line_no, t))
    return key, time


def parse_kern(text: str) -> RawKernDocument:
    """Parse **Kern text into a structured document.

    Total: every input either yields a document or raises ParseError (with a
    line number); malformed spine counts and unknown token classes never
    produce an inconsistent document.
    """
    doc = RawKernDocument()
    staff_map: Optional[tuple[int, ...]] = None
    terminated = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        if line.startswith("!"):
            # Global (!!) and local (!) comments are passthrough annotations.
            if not line.startswith("!!") and staff_map is not None:
                if len(line.split("\t")) != len(staff_map):
                    raise ParseError("local comment spine count mismatch", line_no,
                                     expected=len(staff_map), found=len(line.split("\t")))
            doc.annotations.append((line_no, line))
            continue
        tokens = tuple(line.split("\t"))
        if terminated:
            raise ParseError("content after spine termination", line_no)
        if staff_map is None:
            if not all(t.startswith("**") for t in tokens):
                raise ParseError("expected exclusive interpretation record first", line_no)
            if tokens != ("**kern", "**kern"):
                raise ParseError(
                    f"expected exactly two **kern spines, found {list(tokens)}", line_no)
            staff_map = (0, 1)
            doc.records.append(Record(line_no, "exclusive", tokens))
            doc.staff_maps.append(staff_map)
            continue
        if len(tokens) != len(staff_map):
            raise ParseError(
                f"expected {len(staff_map)} spine tokens, found {len(tokens)}",
                line_no, expected=len(staff_map), found=len(tokens))
        if all(t.startswith("*") for t in tokens):
            if any(t in ("*^", "*v") for t in tokens):
                doc.records.append(Record(line_no, "spine_op", tokens))
                doc.staff_maps.append(staff_map)
                doc.spine_ops.append(len(doc.records) - 1)
                staff_map = _apply_spine_ops(tokens, staff_map, line_no)
                continue
            if all(t == "*-" for t in tokens):
                doc.records.append(Record(line_no, "terminator", tokens))
                doc.staff_maps.append(staff_map)
                terminated = True
                continue
            if any(t == "*-" for t in tokens):
                raise ParseError("partial spine termination", line_no)
            key, time = _extract_key_time(tokens, line_no, doc.annotations)
            doc.records.append(Record(line_no, "interp", tokens, key=key, time=time))
            doc.staff_maps.append(staff_map)
            continue
        if any(t.startswith("=") for t in tokens):
            if not all(t.startswith("=") for t in tokens):
                raise ParseError("barline record mixes barline and data tokens", line_no)
            doc.records.append(Record(line_no, "barline", tokens))
            doc.staff_maps.append(staff_map)
            continue
        events = tuple(_parse_data_token(t, line_no) for t in tokens)
        doc.records.append(Record(line_no, "data", tokens, events=events))
        doc.staff_maps.append(staff_map)
    if staff_map is None:
        raise ParseError("no spines: input has no **kern exclusive record")
    return doc


class _Lane:
    """One voice-in-progress while replaying a document."""

    __slots__ = ("staff", "events", "cum", "born", "dead_at")

    def __init__(self, staff: int, born: Fraction = Fraction(0)):
        self.staff = staff
        self.events: list[NoteEvent] = []
        self.cum = born
        self.born = born
        self.dead_at: Optional[Fraction] = None


def _fill_rests(start: Fraction, end: Fraction, line_no: int) -> list[NoteEvent]:
    """Cover [start, end) with rest events, largest representable first."""
    from .score import representable_durations

    out = []
    cursor = start
    choices = sorted(representable_durations(), reverse=True)
    while cursor < end:
        for d in choices:
            if cursor + d <= end:
                out.append(NoteEvent(cursor, Duration(d), (Note(None),)))
                cursor += d
                break
        else:
            raise SemanticError(f"cannot fill gap of {end - cursor} whole notes with rests",
                                line_no)
    return out


def to_score(doc: RawKernDocument) -> Score:
    """Assemble a Score from a parsed document.

    Onsets accumulate per voice; key/time interpretations take effect at the
    next bar start; a voice born (or merged away) mid-bar is padded with
    rests so every voice spans its bar.
    """
    lanes: list[_Lane] = []
    bar_lanes: list[_Lane] = []
    lower_bars: list[Bar] = []
    upper_bars: list[Bar] = []
    keys: list[KeySignature] = []
    times: list[TimeSignature] = []
    current_key: Optional[KeySignature] = None
    current_time: Optional[TimeSignature] = None
    bar_key: Optional[KeySignature] = None
    bar_time: Optional[TimeSignature] = None
    bar_len: Optional[Fraction] = None
    bar_has_data = False

    def finalize(line_no: int):
        nonlocal bar_has_data, bar_key, bar_time, bar_len
        if not bar_has_data:
            return
        assert bar_time is not None and bar_len is not None
        staff_voices: dict[int, list[Voice]] = {0: [], 1: []}
        for lane in bar_lanes:
            events = list(lane.events)
            if lane.born > 0:
                events = _fill_rests(Fraction(0), lane.born, line_no) + events
            if lane.dead_at is not None and lane.dead_at < bar_len:
                events = events + _fill_rests(lane.dead_at, bar_len, line_no)
            staff_voices[lane.staff].append(Voice(tuple(events)))
        lower_bars.append(Bar(tuple(staff_voices[0])))
        upper_bars.append(Bar(tuple(staff_voices[1])))
        keys.append(bar_key if bar_key is not None else KeySignature(0))
        times.append(bar_time)
        for lane in lanes:
            lane.events = []
            lane.cum = Fraction(0)
            lane.born = Fraction(0)
        bar_lanes.clear()
        bar_lanes.extend(lanes)
        bar_has_data = False
        bar_key = None
        bar_time = None
        bar_len = None

    for rec in doc.records:
        if rec.kind == "exclusive":
            lanes = [_Lane(0), _Lane(1)]
            bar_lanes = list(lanes)
        elif rec.kind == "interp":
            if rec.key is not None:
                current_key = rec.key
            if rec.time is not None:
                current_time = rec.time
        elif rec.kind == "spine_op":
            new_lanes: list[_Lane] = []
            i = 0
            while i < len(rec.tokens):
                t = rec.tokens[i]
                if t == "*^":
                    parent = lanes[i]
                    child = _Lane(parent.staff, born=parent.cum)
                    new_lanes.extend((parent, child))
                    bar_lanes.insert(bar_lanes.index(parent) + 1, child)
                    i += 1
                elif t == "*v":
                    survivor, victim = lanes[i], lanes[i + 1]
                    victim.dead_at = victim.cum
                    if not victim.events and victim.cum == victim.born:
                        # Died before contributing (e.g. merge right at a
                        # barline): not a voice of this bar at all.
                        bar_lanes.remove(victim)
                    new_lanes.append(survivor)
                    i += 2
                else:
                    new_lanes.append(lanes[i])
                    i += 1
            lanes = new_lanes
        elif rec.kind == "barline":
            finalize(rec.line_no)
        elif rec.kind == "data":
            assert rec.events is not None
            if not bar_has_data:
                if current_time is None:
                    raise SemanticError("no time signature before first data record",
                                        rec.line_no)
                bar_time = current_time
                bar_key = current_key
                bar_len = bar_length(bar_time)
                bar_has_data = True
            non_null = [(lane, ev) for lane, ev in zip(lanes, rec.events) if not ev.null]
            if not non_null:
                raise SemanticError("data record with only null tokens", rec.line_no)
            if any(ev.grace for _, ev in non_null):
                if not all(ev.grace for _, ev in non_null):
                    raise SemanticError("grace and timed notes share a record", rec.line_no)
                for lane, ev in non_null:
                    lane.events.append(NoteEvent(lane.cum, ev.duration, ev.notes, grace=True))
                continue
            row_time = min(lane.cum for lane in lanes)
            for lane, ev in zip(lanes, rec.events):
                if ev.null:
                    if lane.cum == row_time:
                        raise SemanticError(
                            "null token where an event is due (voice gap)", rec.line_no)
                    continue
                if lane.cum != row_time:
                    raise SemanticError("event earlier than its voice position", rec.line_no)
                lane.events.append(NoteEvent(lane.cum, ev.duration, ev.notes))
                lane.cum += ev.duration.whole
                if bar_len is not None and lane.cum > bar_len:
                    raise SemanticError(
                        f"voice overflows bar length {bar_len}", rec.line_no)
        elif rec.kind == "terminator":
            finalize(rec.line_no)
    finalize(doc.records[-1].line_no if doc.records else 0)
    return Score(Staff(tuple(lower_bars)), Staff(tuple(upper_bars)),
                 tuple(keys), tuple(times))


def render_event(event: NoteEvent) -> str:
    members = []
    for note in event.notes:
        s = ""
        if note.tie is Tie.START:
            s += "["
        s += event.duration.kern_string()
        if event.grace:
            s += "q"
        s += "r" if note.pitch is None else kern_pitch_name(note.pitch)
        if note.tie is Tie.STOP:
            s += "]"
        elif note.tie is Tie.CONTINUE:
            s += "_"
        s += "".join(m for m in note.marks if m != "n")
        members.append(s)
    return " ".join(members)


def _bar_rows(voices: list[Voice]) -> list[tuple[str, ...]]:
    """Time-align the voices of one bar into data rows (null-padded)."""
    onsets = sorted({e.onset for v in voices for e in v.events})
    rows: list[tuple[str, ...]] = []
    for t in onsets:
        grace_lists = [[e for e in v.events if e.grace and e.onset == t] for v in voices]
        for depth in range(max((len(g) for g in grace_lists), default=0)):
            rows.append(tuple(
                render_event(g[depth]) if depth < len(g) else "."
                for g in grace_lists))
        mains = [next((e for e in v.events if not e.grace and e.onset == t), None)
                 for v in voices]
        if any(m is not None for m in mains):
            rows.append(tuple("." if m is None else render_event(m) for m in mains))
    return rows


def reinsert_identifiers(lower: Staff, upper: Staff,
                         per_bar_key: Optional[tuple[KeySignature, ...]] = None,
                         per_bar_time: Optional[tuple[TimeSignature, ...]] = None,
                         ) -> RawKernDocument:
    """Rebuild a spine document from per-staff voices.

    A `*^` record is placed before the first data record of any bar where a
    staff grows from one voice to two, and a `*v *v` record where it shrinks
    back; the serialized token streams themselves never carry identifiers.
    """
    if lower.bar_count != upper.bar_count:
        raise ValueError(f"staff bar counts differ: {lower.bar_count} vs {upper.bar_count}")
    nbars = lower.bar_count
    for staff_name, staff in (("lower", lower), ("upper", upper)):
        for b, bar in enumerate(staff.bars):
            if not 1 <= len(bar.voices) <= 2:
                raise UnsupportedVoicingError(
                    f"{staff_name} bar {b} has {len(bar.voices)} voices", bar_index=b)

    doc = RawKernDocument()
    counts = {"lower": 1, "upper": 1}

    def current_map() -> tuple[int, ...]:
        return (0,) * counts["lower"] + (1,) * counts["upper"]

    def emit(kind: str, tokens, events=None, key=None, time=None, op=False):
        doc.records.append(Record(0, kind, tuple(tokens), events=events, key=key, time=time))
        doc.staff_maps.append(current_map())
        if op:
            doc.spine_ops.append(len(doc.records) - 1)

    emit("exclusive", ("**kern", "**kern"))
    for b in range(nbars):
        if b > 0:
            emit("barline", ("=",) * len(current_map()))
        if per_bar_key is not None and (b == 0 or per_bar_key[b] != per_bar_key[b - 1]):
            tok = key_signature_token(per_bar_key[b])
            emit("interp", (tok,) * len(current_map()), key=per_bar_key[b])
        if per_bar_time is not None and (b == 0 or per_bar_time[b] != per_bar_time[b - 1]):
            tok = f"*M{per_bar_time[b].label}"
            emit("interp", (tok,) * len(current_map()), time=per_bar_time[b])
        for staff_name, staff in (("lower", lower), ("upper", upper)):
            want = len(staff.bars[b].voices)
            have = counts[staff_name]
            if want == have:
                continue
            if staff_name == "lower":
                ops = ("*^",) if want > have else ("*v", "*v")
                tokens = ops + ("*",) * counts["upper"]
            else:
                ops = ("*^",) if want > have else ("*v", "*v")
                tokens = ("*",) * counts["lower"] + ops
            emit("spine_op", tokens, op=True)
            counts[staff_name] = want
        voices = list(lower.bars[b].voices) + list(upper.bars[b].voices)
        for row in _bar_rows(voices):
            events = tuple(_parse_data_token(t, 0) for t in row)
            emit("data", row, events=events)
    emit("barline", ("==",) * len(current_map()))
    emit("terminator", ("*-",) * len(current_map()))
    return doc


def render_document(doc: RawKernDocument) -> str:
    return "\n".join("\t".join(rec.tokens) for rec in doc.records) + "\n"


def write_kern(score: Score) -> str:
    """Serialize a Score to **Kern text; inverse of parse+to_score on
    normalized scores."""
    doc = reinsert_identifiers(score.lower, score.upper,
                               score.per_bar_key, score.per_bar_time)
    return render_document(doc)
