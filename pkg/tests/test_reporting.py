import numpy as np
import pytest

from oracles import two_key_sort_bruteforce

from synthscope.evaluation import JudgeVerdict, ParaphraseResult, RubricScore
from synthscope.reporting import (
    ExplanationRecord,
    ReportingError,
    compose_report,
    filter_records,
    heatmap_overlay,
    profile_only_report,
    rank_records,
    region_outline_overlay,
    render_markdown,
)
from synthscope.scoring import ArtifactCategory


def _record(slug, G, verdict, c, styles=("technical",)):
    cat = ArtifactCategory(id=slug, name=slug.replace("-", " "), group="texture", prompts=("p",))
    return ExplanationRecord(
        artifact=cat,
        description=f"finding {slug}",
        rubric=RubricScore(G, G, G, G=G),
        verdict=JudgeVerdict(verdict=verdict, confidence=c, justification="grounded" if verdict == "Yes" else ""),
        paraphrases={s: ParaphraseResult(style=s, text=f"{s} text for {slug}", fidelity=1.0) for s in styles},
        regions=[("S0.P0", 0.5)],
    )


class TestFilter:
    def test_no_verdict_removed_despite_confidence(self):
        records = [_record("a", 0.9, "No", 0.9)]
        assert filter_records(records, 0.5) == []

    def test_boundary_confidence_kept(self):
        records = [_record("a", 0.9, "Yes", 0.5)]
        assert len(filter_records(records, 0.5)) == 1

    def test_mixed_six_matches_bruteforce_predicate(self):
        rows = [
            ("a", "Yes", 0.9),
            ("b", "No", 0.9),
            ("c", "Yes", 0.5),
            ("d", "Yes", 0.49),
            ("e", "No", 0.1),
            ("f", "Yes", 1.0),
        ]
        records = [_record(slug, 0.5, v, c) for slug, v, c in rows]
        got = {r.artifact.id for r in filter_records(records, 0.5)}
        want = {slug for slug, v, c in rows if v == "Yes" and c >= 0.5}
        assert got == want

    def test_idempotent_and_order_independent(self, rng):
        records = [
            _record(f"r{i}", 0.5, "Yes" if rng.random() > 0.4 else "No", float(rng.random()))
            for i in range(12)
        ]
        once = filter_records(records, 0.5)
        assert filter_records(once, 0.5) == once
        shuffled = list(records)
        rng.shuffle(shuffled)
        assert {r.artifact.id for r in filter_records(shuffled, 0.5)} == {
            r.artifact.id for r in once
        }


class TestRank:
    def test_first_key_dominates(self):
        a, b = _record("a", 0.9, "Yes", 0.1), _record("b", 0.7, "Yes", 0.99)
        assert [r.artifact.id for r in rank_records([b, a])] == ["a", "b"]

    def test_confidence_breaks_quality_ties(self):
        a, b = _record("a", 0.5, "Yes", 0.6), _record("b", 0.5, "Yes", 0.8)
        assert [r.artifact.id for r in rank_records([a, b])] == ["b", "a"]

    def test_slug_breaks_exact_ties(self):
        a, b = _record("zeta", 0.5, "Yes", 0.5), _record("alpha", 0.5, "Yes", 0.5)
        assert [r.artifact.id for r in rank_records([a, b])] == ["alpha", "zeta"]

    def test_matches_bruteforce_comparator(self, rng):
        for _ in range(20):
            rows = [
                {"slug": f"s{i}", "G": float(rng.choice([0.2, 0.5, 0.8])), "c": float(rng.choice([0.3, 0.6, 0.9]))}
                for i in range(10)
            ]
            records = [_record(r["slug"], r["G"], "Yes", r["c"]) for r in rows]
            got = [r.artifact.id for r in rank_records(records)]
            want = [r["slug"] for r in two_key_sort_bruteforce(rows)]
            assert got == want

    def test_total_order_properties(self, rng):
        records = [
            _record(f"s{i}", float(rng.choice([0.3, 0.7])), "Yes", float(rng.choice([0.4, 0.8])))
            for i in range(15)
        ]
        ranked = rank_records(records)
        again = rank_records(list(reversed(records)))
        assert [r.artifact.id for r in ranked] == [r.artifact.id for r in again]


class TestCompose:
    def test_seven_survivors_keep_five(self):
        records = rank_records([_record(f"s{i}", 0.1 * i, "Yes", 0.9) for i in range(7)])
        report = compose_report("img", 0.8, "bicubic", 4, records, "technical", k=5)
        assert len(report.entries) == 5

    def test_empty_survivors_note(self):
        report = compose_report("img", 0.8, "bicubic", 4, [], "technical", k=5)
        assert report.entries == []
        assert report.note == "no verified artifacts"
        assert "no verified artifacts" in render_markdown(report)

    def test_prefix_property(self):
        records = rank_records([_record(f"s{i}", 0.1 * i, "Yes", 0.9) for i in range(8)])
        for k in range(1, 8):
            smaller = compose_report("img", 0.8, "bicubic", 4, records, "technical", k=k)
            larger = compose_report("img", 0.8, "bicubic", 4, records, "technical", k=k + 1)
            assert [e.artifact_id for e in larger.entries][:k] == [e.artifact_id for e in smaller.entries]

    def test_missing_style_rejected(self):
        records = [_record("a", 0.5, "Yes", 0.9, styles=("technical",))]
        with pytest.raises(ReportingError):
            compose_report("img", 0.8, "bicubic", 4, records, "accessibility", k=5)

    def test_json_deterministic(self):
        records = rank_records([_record(f"s{i}", 0.1 * i, "Yes", 0.9) for i in range(3)])
        r1 = compose_report("img", 0.8, "bicubic", 4, records, "technical", k=5, config_hash="abc")
        r2 = compose_report("img", 0.8, "bicubic", 4, records, "technical", k=5, config_hash="abc")
        assert r1.to_json() == r2.to_json()

    def test_justification_toggle(self):
        records = [_record("a", 0.5, "Yes", 0.9)]
        with_j = compose_report("img", 0.8, "bicubic", 4, records, "technical", k=5)
        without = compose_report(
            "img", 0.8, "bicubic", 4, records, "technical", k=5, include_justification=False
        )
        assert with_j.entries[0].justification == "grounded"
        assert without.entries[0].justification is None

    def test_profile_only_report(self):
        cats = [ArtifactCategory(id=f"c{i}", name=f"C{i}", group="color", prompts=("p",)) for i in range(3)]
        report = profile_only_report("img", 0.4, "identity", 1, [(c, 0.3) for c in cats], 5, "h", "v")
        assert all(e.provenance == "semantic-profile" for e in report.entries)
        assert "semantic profile only" in report.note


class TestOverlays:
    def test_heatmap_overlay_shape_and_range(self, rng):
        img = rng.random((8, 8, 3))
        heat = rng.random((8, 8))
        out = heatmap_overlay(img, heat)
        assert out.shape == (8, 8, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_region_outline_marks_boundary_only(self):
        img = np.full((8, 8, 3), 0.5)
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:6, 2:6] = True
        out = region_outline_overlay(img, mask)
        assert np.allclose(out[3:5, 3:5], 0.5)  # interior untouched
        assert np.allclose(out[2, 2], [0.9, 0.1, 0.1])  # boundary painted
