"""Cleansing, voice normalization, segmentation, voice-count study."""

import random
from collections import Counter
from fractions import Fraction

import pytest

from score_gen import random_score

from kernscribe.errors import UnsupportedVoicingError
from kernscribe.kern import parse_kern, to_score
from kernscribe.preprocess import (
    cleanse,
    count_voices_per_bar,
    normalize_score,
    normalize_voices,
    segment_clips,
)
from kernscribe.score import (
    Bar,
    Duration,
    KeySignature,
    Note,
    NoteEvent,
    Pitch,
    Score,
    Staff,
    Tie,
    TimeSignature,
    Voice,
    validate,
)


def ev(onset, dur, *midis, prefer_flats=False, tie=Tie.NONE, grace=False, marks=()):
    if not midis:
        notes = (Note(None),)
    else:
        notes = tuple(Note(Pitch.from_midi(m, prefer_flats), tie, tuple(marks))
                      for m in midis)
    return NoteEvent(Fraction(onset), Duration(Fraction(dur)), notes, grace=grace)


def score_of(lower_voices, upper_voices=None, bars=1, time=(4, 4), sharps=0):
    upper_voices = upper_voices if upper_voices is not None else lower_voices
    lower = Staff(tuple(Bar(tuple(v)) for v in lower_voices))
    upper = Staff(tuple(Bar(tuple(v)) for v in upper_voices))
    return Score(lower, upper, (KeySignature(sharps),) * bars,
                 (TimeSignature(*time),) * bars)


class TestCleanse:
    def test_grace_notes_removed_durations_kept(self):
        bar = [Voice((ev(0, "1/4", 60, grace=True), ev(0, "1/2", 60),
                      ev("1/2", "1/4", 62, grace=True), ev("1/2", "1/2", 64)))]
        score = score_of([bar])
        out = cleanse(score)
        events = out.lower.bars[0].voices[0].events
        assert len(events) == 2
        assert [e.duration.whole for e in events] == [Fraction(1, 2), Fraction(1, 2)]
        assert out.per_bar_key == score.per_bar_key
        assert out.per_bar_time == score.per_bar_time
        assert out.bar_count == score.bar_count

    def test_no_ornaments_is_identity(self):
        score = random_score(random.Random(3))
        assert cleanse(score) == score

    def test_editorial_marks_stripped_pitches_intact(self):
        bar = [Voice((ev(0, "1/2", 60, marks=("x", "/")), ev("1/2", "1/2", 64, marks=("J",))))]
        out = cleanse(score_of([bar]))
        events = out.lower.bars[0].voices[0].events
        assert all(n.marks == () for e in events for n in e.notes)
        assert [e.notes[0].pitch.midi for e in events] == [60, 64]

    def test_double_accidentals_respelled(self):
        double_sharp = NoteEvent(Fraction(0), Duration(Fraction(1, 1)),
                                 (Note(Pitch("C", 2, 4)),))  # C## = D
        out = cleanse(score_of([[Voice((double_sharp,))]]))
        note = out.lower.bars[0].voices[0].events[0].notes[0]
        assert note.pitch.midi == 62
        assert abs(note.pitch.alter) <= 1


class TestNormalizeVoices:
    def test_parallel_voices_merge_to_chords(self):
        # Two voices with identical rhythm on C4 and E4 become one chordal voice.
        a = Voice((ev(0, "1/2", 60), ev("1/2", "1/2", 62)))
        b = Voice((ev(0, "1/2", 64), ev("1/2", "1/2", 65)))
        out = normalize_voices(Staff((Bar((a, b)),)))
        bar = out.bars[0]
        assert len(bar.voices) == 1
        assert [[n.pitch.midi for n in e.notes] for e in bar.voices[0].events] == \
            [[60, 64], [62, 65]]

    def test_chord_reordered_ascending(self):
        chord = NoteEvent(Fraction(0), Duration(Fraction(1, 1)),
                          (Note(Pitch.from_midi(64)), Note(Pitch.from_midi(60))))
        out = normalize_voices(Staff((Bar((Voice((chord,)),)),)))
        midis = [n.pitch.midi for n in out.bars[0].voices[0].events[0].notes]
        assert midis == [60, 64]

    def test_higher_voice_first(self):
        low = Voice((ev(0, 1, 48),))
        high = Voice((ev(0, "1/2", 72), ev("1/2", "1/2", 74)))
        out = normalize_voices(Staff((Bar((low, high)),)))
        means = []
        for voice in out.bars[0].voices:
            midis = [n.pitch.midi for e in voice.events for n in e.notes if n.pitch]
            means.append(sum(midis) / len(midis))
        assert means[0] >= means[1]
        assert out.bars[0].voices[0] == high

    def test_empty_voice_eliminated(self):
        silent = Voice((ev(0, 1),))
        melody = Voice((ev(0, 1, 60),))
        out = normalize_voices(Staff((Bar((silent, melody)),)))
        assert out.bars[0].voices == (melody,)

    def test_all_empty_keeps_one(self):
        silent = Voice((ev(0, 1),))
        out = normalize_voices(Staff((Bar((silent, silent)),)))
        assert out.bars[0].voices == (silent,)

    def test_three_unmergeable_voices_rejected(self):
        a = Voice((ev(0, 1, 60),))
        b = Voice((ev(0, "1/2", 64), ev("1/2", "1/2", 65)))
        c = Voice((ev(0, "1/4", 67), ev("1/4", "3/4", 69)))
        with pytest.raises(UnsupportedVoicingError) as err:
            normalize_voices(Staff((Bar((a, b, c)),)))
        assert err.value.bar_index == 0

    def test_three_voices_with_mergeable_pair_ok(self):
        a = Voice((ev(0, 1, 60),))
        b = Voice((ev(0, "1/2", 64), ev("1/2", "1/2", 65)))
        b2 = Voice((ev(0, "1/2", 67), ev("1/2", "1/2", 69)))
        out = normalize_voices(Staff((Bar((a, b, b2)),)))
        assert len(out.bars[0].voices) == 2

    def test_idempotent_and_preserves_note_multiset(self):
        for seed in range(12):
            raw = random_score(random.Random(seed), two_voice_prob=0.6)
            once = normalize_voices(raw.lower)
            assert normalize_voices(once) == once
            before = Counter(
                (e.onset, e.duration.whole, n.pitch.midi)
                for bar in raw.lower.bars for v in bar.voices
                for e in v.events for n in e.notes if n.pitch is not None)
            after = Counter(
                (e.onset, e.duration.whole, n.pitch.midi)
                for bar in once.bars for v in bar.voices
                for e in v.events for n in e.notes if n.pitch is not None)
            assert before == after


class TestSegmentClips:
    def test_twelve_bars_two_clips(self):
        score = random_score(random.Random(5), bars=12)
        clips = segment_clips(score, source_id="s")
        assert len(clips) == 2
        assert [c.start_bar_index for c in clips] == [0, 5]
        assert all(c.score.bar_count == 5 for c in clips)

    def test_five_bars_one_clip(self):
        score = random_score(random.Random(6), bars=5)
        assert len(segment_clips(score)) == 1

    def test_short_score_empty(self):
        score = random_score(random.Random(7), bars=4)
        assert segment_clips(score) == []

    def test_concatenation_reproduces_prefix(self):
        score = random_score(random.Random(8), bars=13, tie_prob=0.0)
        clips = segment_clips(score)
        rebuilt_lower = tuple(b for c in clips for b in c.score.lower.bars)
        assert rebuilt_lower == score.lower.bars[:10]
        rebuilt_keys = tuple(k for c in clips for k in c.score.per_bar_key)
        assert rebuilt_keys == score.per_bar_key[:10]

    def test_boundary_ties_truncated(self):
        # Tie spanning bars 4->5 lands on a clip boundary and must be cut.
        score = random_score(random.Random(9), bars=10, tie_prob=0.0,
                             two_voice_prob=0.0)

        def tie_across(score, bar):
            from kernscribe.preprocess import normalize_score

            lower = list(score.lower.bars)
            last = lower[bar].voices[0].events[-1]
            first = lower[bar + 1].voices[0].events[0]
            pitch = Pitch.from_midi(60)
            lower[bar] = Bar((Voice(lower[bar].voices[0].events[:-1] + (
                NoteEvent(last.onset, last.duration, (Note(pitch, Tie.START),)),)),))
            lower[bar + 1] = Bar((Voice((
                NoteEvent(first.onset, first.duration, (Note(pitch, Tie.STOP),)),)
                + lower[bar + 1].voices[0].events[1:]),))
            return Score(Staff(tuple(lower)), score.upper, score.per_bar_key,
                         score.per_bar_time)

        tied = tie_across(score, 4)
        clips = segment_clips(tied)
        last_event = clips[0].score.lower.bars[4].voices[0].events[-1]
        first_event = clips[1].score.lower.bars[0].voices[0].events[0]
        assert last_event.notes[0].tie is Tie.NONE
        assert first_event.notes[0].tie is Tie.NONE

    def test_interior_ties_survive(self):
        score = random_score(random.Random(10), bars=5, tie_prob=1.0,
                             two_voice_prob=0.0)
        ties_before = sum(
            1 for bar in score.lower.bars for v in bar.voices
            for e in v.events for n in e.notes if n.tie is not Tie.NONE)
        clips = segment_clips(score)
        ties_after = sum(
            1 for bar in clips[0].score.lower.bars for v in bar.voices
            for e in v.events for n in e.notes if n.tie is not Tie.NONE)
        assert ties_before > 0
        assert ties_after == ties_before


class TestVoiceCount:
    def test_fig2_histogram(self, fig2_score):
        report = count_voices_per_bar(fig2_score)
        assert report.lower == {1: 1}
        assert report.upper == {2: 1}

    def test_all_single_voice(self):
        score = random_score(random.Random(11), bars=10, two_voice_prob=0.0)
        report = count_voices_per_bar(score)
        assert report.lower == {1: 10}
        assert report.fraction_le2_lower == 1.0

    def test_three_voice_fraction(self):
        three = Bar((Voice((ev(0, 1, 48),)), Voice((ev(0, 1, 55),)),
                     Voice((ev(0, 1, 64),))))
        one = Bar((Voice((ev(0, 1, 60),)),))
        staff = Staff((three,) + (one,) * 9)
        score = Score(staff, staff, (KeySignature(0),) * 10,
                      (TimeSignature(4, 4),) * 10)
        report = count_voices_per_bar(score)
        assert report.lower == {3: 1, 1: 9}
        assert report.fraction_le2_lower == pytest.approx(0.9)


class TestPipelineOnKern:
    def test_parse_normalize_validate(self, fig2_text):
        score = normalize_score(cleanse(to_score(parse_kern(fig2_text))))
        assert validate(score) == []
        assert len(score.upper.bars[0].voices) == 2
