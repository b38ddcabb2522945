import pytest

import case_study
from cooprag.core import Mask
from cooprag.errors import EmptyQuestion, ParseError, UnrollChainError, ValidationError
from cooprag.gateway import MockGateway
from cooprag.unrolling import check_template, parse_unroll_output, render_unroll_prompt, unroll

GOOD = """Hop Count: 2
Reasoning Structure: two hops.
Sub-questions: ["Who wrote X?", "Where was that author born?"]
Triple Reasoning Chain:
[["X", "written by", "<UNCERTAIN>"], ["<UNCERTAIN>", "born in", "<FILL>"]]"""


class TestParse:
    def test_case_study_output(self):
        u = parse_unroll_output(case_study.UNROLL_RESPONSE, case_study.QUESTION)
        assert u.hop_count == 4
        assert len(u.sub_questions) == 4
        assert u.sub_questions[0] == "Who directed the film 45 Calibre Echo?"
        assert u.chain.mask_count(Mask.UNCERTAIN) == 5
        assert u.chain.triples[-1].tail is Mask.FILL
        assert u.raw_llm_text == case_study.UNROLL_RESPONSE

    def test_bold_markers_and_missing_structure(self):
        text = GOOD.replace("Reasoning Structure: two hops.\n", "").replace("Hop Count:", "**Hop Count:**")
        assert parse_unroll_output(text, "Q").hop_count == 2

    def test_echoed_format_uses_last_section(self):
        text = "Sub-questions: [\"template\"]\nTriple Reasoning Chain: [[\"a\",\"b\",\"c\"]]\n" + GOOD
        assert parse_unroll_output(text, "Q").sub_questions == ("Who wrote X?", "Where was that author born?")

    @pytest.mark.parametrize(
        "text",
        [
            "",
            GOOD.replace("Hop Count: 2", "Hop Count: many"),
            GOOD.replace("Hop Count: 2", "Hop Count: 0"),
            GOOD.split("Triple Reasoning Chain:")[0],
            GOOD.replace('[["X"', '["X"'),
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            parse_unroll_output(text, "Q")

    def test_chain_invariant_is_parse_error(self):
        with pytest.raises(UnrollChainError):
            parse_unroll_output(GOOD.replace('"<FILL>"', '"Paris"'), "Q")

    def test_empty_sub_questions_accepted(self):
        u = parse_unroll_output(GOOD.replace('["Who wrote X?", "Where was that author born?"]', "[]"), "Q")
        assert u.sub_questions == ()


class TestUnroll:
    def test_prompt_contains_question(self):
        assert render_unroll_prompt("Why?").rstrip().endswith("Why?")
        with pytest.raises(EmptyQuestion):
            render_unroll_prompt("  ")

    def test_template_must_have_markers(self):
        with pytest.raises(ValidationError):
            check_template("[question]")

    def test_retries_then_succeeds(self):
        gw = MockGateway()
        gw.add(render_unroll_prompt("Q"), ["garbage", "more garbage", GOOD])
        assert unroll("Q", gw, max_attempts=3).hop_count == 2
        assert len(gw.calls) == 3

    def test_gives_up_after_attempts(self):
        gw = MockGateway()
        gw.add(render_unroll_prompt("Q"), "garbage")
        with pytest.raises(ParseError):
            unroll("Q", gw, max_attempts=1)
        assert len(gw.calls) == 1
