"""WER vs an independent oracle, macro-F1 hand cases, MV2H-lite counts."""

import random
from fractions import Fraction
from functools import lru_cache

import pytest

from score_gen import random_score

from kernscribe.errors import InputError
from kernscribe.metrics import (
    confusion_counts,
    edit_distance,
    evaluate_clips,
    macro_f1,
    mv2h_lite,
    wer,
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
)
from kernscribe.tokens import serialize_staff, strip_specials


def oracle_distance(a, b):
    """Memoized recursive Levenshtein, independent of the two-row DP."""

    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(go(i + 1, j) + 1,
                   go(i, j + 1) + 1,
                   go(i + 1, j + 1) + (a[i] != b[j]))

    return go(0, 0)


def random_tokens(rng, n):
    return [rng.choice("abcde") for _ in range(n)]


class TestWer:
    def test_identical_is_zero(self):
        assert wer(list("abcabc"), list("abcabc")) == 0.0

    def test_single_substitution(self):
        ref = list("0123456789")
        hyp = ref.copy()
        hyp[4] = "x"
        assert wer(hyp, ref) == pytest.approx(0.1)

    def test_empty_hypothesis(self):
        assert wer([], list("abcd")) == 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(InputError):
            wer(list("ab"), [])

    def test_matches_oracle_on_random_pairs(self):
        rng = random.Random(0)
        for _ in range(200):
            a = random_tokens(rng, rng.randint(0, 12))
            b = random_tokens(rng, rng.randint(1, 12))
            assert edit_distance(a, b) == oracle_distance(a, b)

    def test_distance_symmetric_and_integral(self):
        rng = random.Random(1)
        for _ in range(100):
            a = random_tokens(rng, rng.randint(1, 10))
            b = random_tokens(rng, rng.randint(1, 10))
            d = edit_distance(a, b)
            assert d == edit_distance(b, a)
            assert wer(a, b) * len(b) == pytest.approx(d)

    def test_triangle_inequality(self):
        rng = random.Random(2)
        for _ in range(100):
            a, b, c = (random_tokens(rng, rng.randint(0, 8)) for _ in range(3))
            assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1(["4/4"] * 3 + ["3/4"], ["4/4"] * 3 + ["3/4"]) == 1.0

    def test_hand_computed_case(self):
        refs = ["4/4", "4/4", "3/4", "3/4"]
        preds = ["4/4", "3/4", "3/4", "3/4"]
        # F1(4/4) = 2/3, F1(3/4) = 4/5, macro = 11/15.
        assert macro_f1(preds, refs) == pytest.approx(11 / 15)

    def test_all_wrong_single_class(self):
        assert macro_f1(["a"] * 4, ["b"] * 4) == 0.0

    def test_unsupported_class_excluded(self):
        refs = ["a", "a"]
        preds = ["a", "a"]
        assert macro_f1(preds, refs, classes=["a", "b", "c"]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            macro_f1(["a"], ["a", "b"])

    def test_confusion_counts(self):
        counts = confusion_counts(["a", "b", "a"], ["a", "a", "a"])
        assert counts == {("a", "a"): 2, ("a", "b"): 1}


def q_note(onset, midi, dur=Fraction(1, 4), tie=Tie.NONE):
    return NoteEvent(Fraction(onset), Duration(dur), (Note(Pitch.from_midi(midi), tie),))


def whole_rest():
    return NoteEvent(Fraction(0), Duration(Fraction(1)), (Note(None),))


def five_bar(lower_bars, upper_bars=None, keys=None):
    upper_bars = upper_bars if upper_bars is not None else [Bar((Voice((whole_rest(),)),))] * 5
    keys = keys or [0] * 5
    return Score(Staff(tuple(lower_bars)), Staff(tuple(upper_bars)),
                 tuple(KeySignature(k) for k in keys),
                 (TimeSignature(4, 4),) * 5)


def melody_bar(*midis):
    return Bar((Voice(tuple(q_note(Fraction(i, 4), m) for i, m in enumerate(midis))),))


class TestMv2hLite:
    def test_identity_all_ones(self):
        score = random_score(random.Random(3))
        result = mv2h_lite(score, score)
        assert (result.f_p, result.f_voi, result.f_val, result.f_harm,
                result.f_mv2h) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_spurious_note_fp(self):
        ref_bar = melody_bar(60, 62, 64, 65)
        ref = five_bar([ref_bar] + [Bar((Voice((whole_rest(),)),))] * 4)
        # Same four notes plus one extra as a chord member on the downbeat.
        extra = NoteEvent(Fraction(0), Duration(Fraction(1, 4)),
                          (Note(Pitch.from_midi(60)), Note(Pitch.from_midi(72))))
        hyp_voice = Voice((extra,) + ref_bar.voices[0].events[1:])
        hyp = five_bar([Bar((hyp_voice,))] + [Bar((Voice((whole_rest(),)),))] * 4)
        result = mv2h_lite(hyp, ref)
        assert result.f_p == pytest.approx(8 / 9)

    def test_wrong_key_one_bar(self):
        score = random_score(random.Random(4))
        wrong = Score(score.lower, score.upper,
                      score.per_bar_key[:3] + (KeySignature(
                          score.per_bar_key[3].sharps + 1),) + score.per_bar_key[4:],
                      score.per_bar_time)
        result = mv2h_lite(wrong, score)
        assert result.f_val == 1.0
        assert result.f_harm == pytest.approx(0.8)
        assert result.f_p == 1.0

    def test_duration_error_hits_fval_only(self):
        ref = five_bar([melody_bar(60, 62, 64, 65)] + [melody_bar(67, 69, 71, 72)] * 4)
        # Same onsets/pitches, but one note split into two eighths: the
        # second eighth is spurious and the first has the wrong duration.
        bar = ref.lower.bars[0]
        first = bar.voices[0].events[0]
        split = (
            NoteEvent(Fraction(0), Duration(Fraction(1, 8)),
                      (Note(Pitch.from_midi(60)),)),
            NoteEvent(Fraction(1, 8), Duration(Fraction(1, 8)),
                      (Note(Pitch.from_midi(60)),)),
        ) + bar.voices[0].events[1:]
        hyp = five_bar([Bar((Voice(split),))] + list(ref.lower.bars[1:]))
        result = mv2h_lite(hyp, ref)
        assert result.f_val < 1.0
        assert result.f_harm == 1.0

    def test_voice_permutation_invariant(self):
        score = random_score(random.Random(5), two_voice_prob=1.0)
        swapped_bars = tuple(
            Bar(tuple(reversed(bar.voices))) for bar in score.upper.bars)
        swapped = Score(score.lower, Staff(swapped_bars), score.per_bar_key,
                        score.per_bar_time)
        result = mv2h_lite(swapped, score)
        assert (result.f_p, result.f_voi, result.f_val, result.f_harm) == \
            (1.0, 1.0, 1.0, 1.0)

    def test_tie_chain_counts_once(self):
        # Ref: two tied half notes (one sounding whole); hyp: one whole note.
        tied = Bar((Voice((
            q_note(0, 60, Fraction(1, 2), Tie.START),
            q_note(Fraction(1, 2), 60, Fraction(1, 2), Tie.STOP))),))
        whole = Bar((Voice((NoteEvent(Fraction(0), Duration(Fraction(1)),
                                      (Note(Pitch.from_midi(60)),)),)),))
        rest_bars = [Bar((Voice((whole_rest(),)),))] * 4
        ref = five_bar([tied] + rest_bars)
        hyp = five_bar([whole] + rest_bars)
        result = mv2h_lite(hyp, ref)
        assert result.f_p == 1.0
        assert result.f_val == 1.0

    def test_bar_count_mismatch(self):
        a = random_score(random.Random(6), bars=5)
        b = random_score(random.Random(6), bars=4)
        with pytest.raises(InputError):
            mv2h_lite(a, b)

    def test_mean_is_exact(self):
        rng = random.Random(7)
        ref = random_score(rng)
        hyp = random_score(rng)
        r = mv2h_lite(hyp, ref)
        assert r.f_mv2h == (r.f_p + r.f_voi + r.f_val + r.f_harm) / 4.0
        for value in (r.f_p, r.f_voi, r.f_val, r.f_harm):
            assert 0.0 <= value <= 1.0


def _serializer(staff, times):
    return list(strip_specials(
        serialize_staff(staff, bars=staff.bar_count, times=times).tokens))


class TestEvaluateClips:
    def test_identity_report(self):
        clips = [(f"c{i}", s, s) for i, s in
                 ((i, random_score(random.Random(i))) for i in range(3))]
        report = evaluate_clips(clips, _serializer)
        assert report.wer_overall == 0.0
        assert report.f_key == 1.0 and report.f_time == 1.0
        assert report.f_mv2h == 1.0
        assert report.clips == 3

    def test_pooled_wer(self):
        ref = random_score(random.Random(8))
        hyp = random_score(random.Random(9))
        report = evaluate_clips([("a", hyp, ref), ("b", ref, ref)], _serializer)
        d_low = edit_distance(_serializer(hyp.lower, hyp.per_bar_time),
                              _serializer(ref.lower, ref.per_bar_time))
        d_up = edit_distance(_serializer(hyp.upper, hyp.per_bar_time),
                             _serializer(ref.upper, ref.per_bar_time))
        n_low = len(_serializer(ref.lower, ref.per_bar_time))
        n_up = len(_serializer(ref.upper, ref.per_bar_time))
        assert report.wer_overall == pytest.approx(
            (d_low + d_up) / (2 * n_low + 2 * n_up))

    def test_report_mean_exact(self):
        ref = random_score(random.Random(10))
        hyp = random_score(random.Random(11))
        report = evaluate_clips([("a", hyp, ref)], _serializer)
        assert report.f_mv2h == (report.f_p + report.f_voi +
                                 report.f_val + report.f_harm) / 4.0

    def test_json_shape(self):
        score = random_score(random.Random(12))
        payload = evaluate_clips([("x", score, score)], _serializer).as_dict()
        assert payload["f_mv2h"] == 1.0
        assert isinstance(payload["key_confusion"], list)
        assert all({"true_label", "pred_label", "count"} <= set(e)
                   for e in payload["key_confusion"])
