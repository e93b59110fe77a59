"""Parser/writer: spine topology, timing, key tables, round trips, totality."""

import random
from fractions import Fraction

import pytest

from score_gen import FIG2_KERN, random_score

from kernscribe.errors import ParseError, SemanticError
from kernscribe.kern import (
    key_signature_token,
    kern_pitch_name,
    parse_kern,
    render_document,
    to_score,
    write_kern,
)
from kernscribe.score import KeySignature, Pitch, Tie


def circle_of_fifths_accidentals(sharps: int) -> list[str]:
    """Independent oracle: accidental names for a signature, fifths order."""
    sharp_letters = ["F", "C", "G", "D", "A", "E", "B"]
    if sharps >= 0:
        return [l.lower() + "#" for l in sharp_letters[:sharps]]
    return [l.lower() + "-" for l in reversed(sharp_letters)][: -sharps]


class TestParseStructure:
    def test_fig2_spine_topology(self, fig2_doc):
        # One voice per staff until the upper staff splits: 2 spines -> 3.
        assert fig2_doc.staff_maps[0] == (0, 1)
        data_maps = [m for r, m in zip(fig2_doc.records, fig2_doc.staff_maps)
                     if r.kind == "data"]
        assert data_maps[0] == (0, 1, 1)
        assert len(fig2_doc.spine_ops) == 2
        assert fig2_doc.terminal_spines == 2

    def test_empty_input(self):
        with pytest.raises(ParseError, match="no spines"):
            parse_kern("")

    def test_comment_only_input(self):
        with pytest.raises(ParseError, match="no spines"):
            parse_kern("!!! just a reference record\n")

    def test_spine_count_mismatch(self):
        text = "**kern\t**kern\n*M4/4\t*M4/4\n*\t*^\n4c\t4c\n"
        with pytest.raises(ParseError) as err:
            parse_kern(text)
        assert err.value.expected == 3
        assert err.value.found == 2
        assert err.value.line == 4

    def test_unknown_token_class(self):
        with pytest.raises(ParseError, match="unknown character"):
            parse_kern("**kern\t**kern\n*M4/4\t*M4/4\n4c?\t4c\n".replace("?", "%"))

    def test_single_spine_rejected(self):
        with pytest.raises(ParseError, match="two \\*\\*kern"):
            parse_kern("**kern\n*M4/4\n4c\n*-\n")

    def test_triple_merge_rejected(self):
        text = ("**kern\t**kern\n*M4/4\t*M4/4\n*\t*^\n*\t*\t*^\n"
                "4c\t4c\t4c\t4c\n*\t*v\t*v\t*v\n")
        with pytest.raises(ParseError, match="exactly two"):
            parse_kern(text)

    def test_cross_staff_merge_rejected(self):
        text = "**kern\t**kern\n*M4/4\t*M4/4\n*v\t*v\n"
        with pytest.raises(ParseError, match="across staffs"):
            parse_kern(text)

    def test_spine_bookkeeping_balance(self, fig2_doc):
        # Terminal count = initial + splits - merges.
        splits = sum(r.tokens.count("*^") for r in fig2_doc.records)
        merges = sum(r.tokens.count("*v") // 2 for r in fig2_doc.records)
        assert fig2_doc.terminal_spines == fig2_doc.initial_spines + splits - merges

    def test_parser_totality_on_mutations(self):
        # Randomly corrupted inputs must raise ParseError/SemanticError with
        # a line number, never crash or return an inconsistent document.
        rng = random.Random(7)
        base = FIG2_KERN
        junk = "%$?€\x00"
        for _ in range(300):
            chars = list(base)
            for _ in range(rng.randint(1, 4)):
                pos = rng.randrange(len(chars))
                action = rng.random()
                if action < 0.4:
                    chars[pos] = rng.choice(junk)
                elif action < 0.7:
                    del chars[pos]
                else:
                    chars.insert(pos, rng.choice("\t\n=*^v. 4c"))
            text = "".join(chars)
            try:
                doc = parse_kern(text)
                to_score(doc)
            except (ParseError, SemanticError):
                continue
            except Exception as exc:  # pragma: no cover
                pytest.fail(f"unexpected {type(exc).__name__}: {exc!r}\n{text!r}")


class TestToScore:
    def test_cumulative_onsets(self):
        text = ("**kern\t**kern\n*M4/4\t*M4/4\n"
                "4C\t4c\n4D\t4d\n4E\t4e\n4F\t4f\n=\t=\n*-\t*-\n")
        score = to_score(parse_kern(text))
        onsets = [e.onset for e in score.lower.bars[0].voices[0].events]
        assert onsets == [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)]

    def test_fig2_voicing(self, fig2_score):
        assert len(fig2_score.lower.bars[0].voices) == 1
        assert len(fig2_score.upper.bars[0].voices) == 2
        upper_first = fig2_score.upper.bars[0].voices[0]
        assert upper_first.events[0].duration.whole == Fraction(1, 16)
        lower_chord = fig2_score.lower.bars[0].voices[0].events[0]
        assert [n.pitch.midi for n in lower_chord.notes] == [39, 51]

    def test_key_signature_tokens_against_oracle(self):
        for sharps in range(-6, 8):
            token = key_signature_token(KeySignature(sharps))
            expected = "*k[" + "".join(circle_of_fifths_accidentals(sharps)) + "]"
            assert token == expected
            text = (f"**kern\t**kern\n{token}\t{token}\n*M4/4\t*M4/4\n"
                    "1r\t1r\n=\t=\n*-\t*-\n")
            score = to_score(parse_kern(text))
            assert score.per_bar_key[0].sharps == sharps

    def test_flat_key_shorthand(self):
        text = ("**kern\t**kern\n*k[b-]\t*k[b-]\n*M4/4\t*M4/4\n"
                "1r\t1r\n=\t=\n*-\t*-\n")
        assert to_score(parse_kern(text)).per_bar_key[0].sharps == -1

    def test_missing_time_signature(self):
        with pytest.raises(SemanticError, match="time signature"):
            to_score(parse_kern("**kern\t**kern\n4c\t4c\n*-\t*-\n"))

    def test_missing_key_defaults_to_c(self):
        text = "**kern\t**kern\n*M4/4\t*M4/4\n1r\t1r\n=\t=\n*-\t*-\n"
        assert to_score(parse_kern(text)).per_bar_key[0].sharps == 0

    def test_ties_parse(self):
        text = ("**kern\t**kern\n*M4/4\t*M4/4\n"
                "[1c\t1r\n=\t=\n1c_\t1r\n=\t=\n1c]\t1r\n=\t=\n*-\t*-\n")
        score = to_score(parse_kern(text))
        ties = [score.lower.bars[b].voices[0].events[0].notes[0].tie for b in range(3)]
        assert ties == [Tie.START, Tie.CONTINUE, Tie.STOP]

    def test_grace_and_marks_survive_parse(self):
        text = ("**kern\t**kern\n*M4/4\t*M4/4\n"
                "8qd\t.\n2c/\t2cc\\\n2c'\t2ccLJ\n=\t=\n*-\t*-\n")
        score = to_score(parse_kern(text))
        events = score.lower.bars[0].voices[0].events
        assert events[0].grace and events[0].onset == 0
        assert [e.grace for e in events] == [True, False, False]
        assert "/" in events[1].notes[0].marks
        # grace events do not count toward the duration sum
        from kernscribe.score import validate

        assert validate(score) == []

    def test_mid_bar_split_pads_rests(self):
        # Upper staff splits halfway through the bar; the born voice gets
        # leading rests, the merged-away voice is never padded past its end.
        text = ("**kern\t**kern\n*M4/4\t*M4/4\n"
                "2C\t2c\n*\t*^\n2C\t2c\t2e\n=\t=\t=\n*\t*v\t*v\n*-\t*-\n")
        score = to_score(parse_kern(text))
        upper = score.upper.bars[0]
        assert len(upper.voices) == 2
        born = upper.voices[1]
        assert born.events[0].is_rest
        assert born.events[0].duration.whole == Fraction(1, 2)
        assert born.events[1].notes[0].pitch.midi == 64
        from kernscribe.score import validate

        assert validate(score) == []

    def test_voice_gap_rejected(self):
        text = ("**kern\t**kern\n*M4/4\t*M4/4\n"
                "*\t*^\n4c\t4c\t4c\n4c\t.\t.\n")
        with pytest.raises(SemanticError, match="gap|null"):
            to_score(parse_kern(text))

    def test_bar_overflow_rejected(self):
        text = "**kern\t**kern\n*M4/4\t*M4/4\n1c\t1c\n2c\t.\n=\t=\n*-\t*-\n"
        with pytest.raises(SemanticError):
            to_score(parse_kern(text))


class TestWrite:
    def test_fig2_round_trip(self, fig2_score):
        text = write_kern(fig2_score)
        assert to_score(parse_kern(text)) == fig2_score

    def test_single_voice_scale_has_two_spines(self):
        rng = random.Random(1)
        score = random_score(rng, two_voice_prob=0.0)
        text = write_kern(score)
        first_line = text.splitlines()[0]
        assert first_line == "**kern\t**kern"
        assert "*^" not in text
        assert to_score(parse_kern(text)) == score

    @pytest.mark.parametrize("seed", range(25))
    def test_random_round_trip(self, seed):
        score = random_score(random.Random(seed), keys=tuple(range(-6, 8)))
        assert to_score(parse_kern(write_kern(score))) == score

    def test_pitch_name_samples(self):
        assert kern_pitch_name(Pitch("E", -1, 2)) == "EE-"
        assert kern_pitch_name(Pitch("C", 0, 4)) == "c"
        assert kern_pitch_name(Pitch("C", 1, 5)) == "cc#"
        assert kern_pitch_name(Pitch("A", 0, 0)) == "AAAA"
        assert kern_pitch_name(Pitch("C", 0, 8)) == "ccccc"

    def test_render_parse_document_stability(self, fig2_score):
        # Idempotent write: writing the reparsed score reproduces the text,
        # and rendering the parsed document is byte-stable.
        text1 = write_kern(fig2_score)
        assert write_kern(to_score(parse_kern(text1))) == text1
        assert render_document(parse_kern(text1)) == text1
