import hashlib
import string

import numpy as np
import pytest

from conftest import make_raster, random_raster

from synthscope.reasoning import (
    ACTIONS,
    EvidencePack,
    EvidenceRegion,
    ReasoningError,
    assemble_narrative,
    compute_observation,
    load_template,
    parse_turn,
    run_react,
    synthesize_cot,
)
from synthscope.scoring import ArtifactCategory, score_categories


class SequenceGenerator:
    """Feeds scripted completions in order, ignoring the prompt."""

    def __init__(self, completions):
        self.completions = list(completions)
        self.calls = 0

    def generate(self, messages, max_tokens=512, temperature=0.0):
        reply = self.completions[min(self.calls, len(self.completions) - 1)]
        self.calls += 1
        return reply


def _artifact():
    return ArtifactCategory(
        id="texture-repetition",
        name="Texture repetition patterns",
        group="texture",
        prompts=("a repeating texture",),
    )


def _taxonomy():
    return [
        _artifact(),
        ArtifactCategory(id="ghosting-effects", name="Ghosting effects", group="structure", prompts=("ghost",)),
    ]


def _evidence(rng):
    profile = score_categories(
        ["texture-repetition", "ghosting-effects"],
        rng.uniform(-0.2, 0.4, size=(2, 2)),
        rng.uniform(-0.2, 0.4, size=(3, 2)),
        0.5,
    )
    regions = []
    for i in range(2):
        crop = random_raster(rng, 6, 6)
        regions.append(
            EvidenceRegion(
                region_id=f"S{i}.P0",
                w_tilde=0.4 - 0.1 * i,
                crop=crop,
                mask=np.ones((6, 6), dtype=bool),
                top_sims=[("texture-repetition", 0.3), ("ghosting-effects", 0.1)],
            )
        )
    return EvidencePack(regions=regions, profile=profile)


FINISH_TURN = (
    "Thought: the evidence suffices.\n"
    "Action: finish\n"
    "Action Input: none\n"
    'Final Answer: {"description": "Region S0.P0 shows a repeating texture block."}'
)

INSPECT_TURN = "Thought: check the hot region first.\nAction: inspect_region\nAction Input: S0.P0"


class TestGrammar:
    def test_minimal_finish_turn(self):
        thought, action, action_input, desc = parse_turn(FINISH_TURN)
        assert action == "finish"
        assert desc == "Region S0.P0 shows a repeating texture block."

    def test_action_outside_set_rejected(self):
        bad = INSPECT_TURN.replace("inspect_region", "zoom_and_enhance")
        with pytest.raises(ReasoningError):
            parse_turn(bad)

    def test_missing_fields_rejected(self):
        with pytest.raises(ReasoningError):
            parse_turn("Thought: no action follows")

    def test_finish_requires_final_answer(self):
        with pytest.raises(ReasoningError):
            parse_turn("Thought: done\nAction: finish\nAction Input: none")

    def test_fuzzed_actions_accepted_iff_in_set(self):
        rng = np.random.default_rng(9)
        alphabet = string.ascii_lowercase + "_"
        for i in range(200):
            if i % 4 == 0:
                action = ACTIONS[rng.integers(0, len(ACTIONS))]
            else:
                action = "".join(rng.choice(list(alphabet), size=rng.integers(3, 16)))
            turn = f"Thought: t\nAction: {action}\nAction Input: S0.P0"
            if action == "finish":
                turn += '\nFinal Answer: {"description": "d"}'
            if action in ACTIONS:
                parse_turn(turn)
            else:
                with pytest.raises(ReasoningError):
                    parse_turn(turn)


class TestObservations:
    def test_deterministic_bytes(self, rng):
        evidence = _evidence(rng)
        for action in ("inspect_region", "evaluate_texture", "check_symmetry", "check_edges"):
            a = compute_observation(action, "S0.P0", evidence)
            b = compute_observation(action, "S0.P0", evidence)
            assert a == b and isinstance(a, str) and a

    def test_unknown_region_reported(self, rng):
        evidence = _evidence(rng)
        out = compute_observation("inspect_region", "S9.P9", evidence)
        assert "unknown region" in out

    def test_texture_repetition_period_detected(self):
        # 4-px periodic stripes: first autocovariance peak at lag 4 along x
        tile = np.zeros((16, 16, 1))
        tile[:, ::4, 0] = 1.0
        region = EvidenceRegion("S0.P0", 0.5, make_raster(tile), np.ones((16, 16), bool), [])
        out = compute_observation("evaluate_texture", "S0.P0", EvidencePack([region], None))
        assert "repeats every ~4 px along x" in out

    def test_symmetric_crop_zero_flip_difference(self):
        sym = np.zeros((4, 4, 1))
        sym[:, 1:3, 0] = 0.8
        region = EvidenceRegion("S0.P0", 0.5, make_raster(sym), np.ones((4, 4), bool), [])
        out = compute_observation("check_symmetry", "S0.P0", EvidencePack([region], None))
        assert "difference 0.0000" in out


class TestRunReact:
    def test_single_turn_finish(self, rng):
        evidence = _evidence(rng)
        backend = SequenceGenerator([FINISH_TURN])
        trace = run_react(_artifact(), evidence, backend, max_steps=6)
        assert len(trace.steps) == 1
        assert trace.steps[0].action == "finish"
        assert trace.steps[0].observation == ""
        assert trace.final_description == "Region S0.P0 shows a repeating texture block."
        assert not trace.malformed and not trace.budget_exhausted

    def test_grammar_retry_then_malformed(self, rng):
        evidence = _evidence(rng)
        bad = "Action: zoom_and_enhance\nwhatever"
        backend = SequenceGenerator([bad, bad, bad])
        trace = run_react(_artifact(), evidence, backend, max_steps=3, retries=2)
        assert trace.malformed
        assert backend.calls == 3  # initial + 2 retries

    def test_retry_recovers_once(self, rng):
        evidence = _evidence(rng)
        backend = SequenceGenerator(["garbage", FINISH_TURN])
        trace = run_react(_artifact(), evidence, backend, max_steps=3, retries=2)
        assert not trace.malformed
        assert trace.final_description

    def test_budget_exhaustion_flag(self, rng):
        evidence = _evidence(rng)
        backend = SequenceGenerator([INSPECT_TURN])  # never finishes
        trace = run_react(_artifact(), evidence, backend, max_steps=3)
        assert len(trace.steps) == 3
        assert trace.budget_exhausted
        assert all(s.observation for s in trace.steps)

    def test_backend_call_budget(self, rng):
        evidence = _evidence(rng)
        backend = SequenceGenerator([INSPECT_TURN])
        run_react(_artifact(), evidence, backend, max_steps=4, retries=2)
        assert backend.calls <= 4 * 3

    def test_token_budget_stops_loop(self, rng):
        evidence = _evidence(rng)
        backend = SequenceGenerator([INSPECT_TURN])
        trace = run_react(_artifact(), evidence, backend, max_steps=50, max_tokens=15)
        assert trace.budget_exhausted
        assert len(trace.steps) < 50
        assert trace.token_budget_used > 15

    def test_empty_evidence_rejected(self, rng):
        with pytest.raises(ReasoningError):
            run_react(_artifact(), EvidencePack([], None), SequenceGenerator([FINISH_TURN]))

    def test_bit_reproducible_with_scripted_mock(self, rng):
        from synthscope.backends import ScriptedGenerator

        evidence = _evidence(rng)
        t1 = run_react(_artifact(), evidence, ScriptedGenerator(on_miss="synthesize", seed=3))
        t2 = run_react(_artifact(), evidence, ScriptedGenerator(on_miss="synthesize", seed=3))
        assert [s.as_dict() for s in t1.steps] == [s.as_dict() for s in t2.steps]
        assert t1.final_description == t2.final_description


class TestCot:
    def test_marker_extraction(self, rng):
        evidence = _evidence(rng)
        trace = run_react(_artifact(), evidence, SequenceGenerator([FINISH_TURN]))
        backend = SequenceGenerator(["Step 1: looked.\nFinal Explanation: region SP-9 shows flattening"])
        summary, fallback = synthesize_cot(trace.steps, _artifact(), evidence, backend)
        assert summary == "region SP-9 shows flattening"
        assert not fallback

    def test_missing_marker_falls_back_to_thoughts(self, rng):
        evidence = _evidence(rng)
        trace = run_react(_artifact(), evidence, SequenceGenerator([FINISH_TURN]))
        backend = SequenceGenerator(["no marker here", "still none"])
        summary, fallback = synthesize_cot(trace.steps, _artifact(), evidence, backend)
        assert fallback
        assert summary == "the evidence suffices."

    def test_empty_steps_rejected(self, rng):
        with pytest.raises(ReasoningError):
            synthesize_cot([], _artifact(), _evidence(rng), SequenceGenerator(["x"]))


class TestNarrative:
    def test_cites_only_known_regions(self, rng):
        evidence = _evidence(rng)
        trace = run_react(_artifact(), evidence, SequenceGenerator([FINISH_TURN]))
        narrative = assemble_narrative(
            {"provenance": "bicubic", "factor": 4},
            {"n_coarse": 2, "n_fine": 4},
            evidence.profile,
            "Region S0.P0 drives the finding; S9.P9 is not real evidence.",
            trace.steps,
            _artifact(),
            evidence,
            _taxonomy(),
        )
        assert narrative.regions == [("S0.P0", pytest.approx(0.4))]
        assert narrative.category == "texture-repetition"

    def test_no_cited_regions_defaults_to_top(self, rng):
        evidence = _evidence(rng)
        trace = run_react(_artifact(), evidence, SequenceGenerator([FINISH_TURN]))
        narrative = assemble_narrative(
            {}, {}, evidence.profile, "Tiling repeats every ~40 px.", trace.steps,
            _artifact(), evidence, _taxonomy(),
        )
        assert narrative.regions[0][0] == "S0.P0"

    def test_empty_summary_rejected(self, rng):
        evidence = _evidence(rng)
        with pytest.raises(ReasoningError):
            assemble_narrative({}, {}, evidence.profile, "  ", [], _artifact(), evidence, _taxonomy())

    def test_unknown_category_rejected(self, rng):
        evidence = _evidence(rng)
        stranger = ArtifactCategory(id="not-in-tax", name="X", group="color", prompts=("p",))
        with pytest.raises(ReasoningError):
            assemble_narrative({}, {}, evidence.profile, "text", [], stranger, evidence, _taxonomy())


class TestTemplates:
    # template hashes are pinned: prompt wording is part of the engine's
    # reproducibility contract, so edits must be deliberate
    PINNED = {
        "react": "4de0c8450ffb",
        "cot": "2db10bc85916",
        "rubric": "0ef4ee23be44",
        "judge": "754c5e10c992",
        "paraphrase_technical": "407fd8cf9356",
        "paraphrase_human_friendly": "706d29b4a17c",
        "paraphrase_accessibility": "f4c9e71369e1",
    }

    def test_templates_have_required_markers(self):
        react = load_template("react")
        for action in ACTIONS:
            assert action in react
        assert "Final Answer" in react
        assert "Final Explanation:" in load_template("cot")
        judge = load_template("judge")
        for marker in ("Truthfulness", "Relevance", "Clarity", "Final Score", "Justification"):
            assert marker in judge
        rubric = load_template("rubric")
        for marker in ("Clarity", "Specificity", "Relevance"):
            assert marker in rubric

    def test_template_hashes_pinned(self):
        for name, expected in self.PINNED.items():
            digest = hashlib.sha256(load_template(name).encode()).hexdigest()[:12]
            assert digest == expected, f"{name} template changed: {digest}"
