from __future__ import annotations

import json

import pytest

from drivestress.records import EvalRecord
from drivestress.taxonomy import (
    DEFAULT_LEXICONS,
    FAILURE_LABELS,
    FALLBACK_CATEGORY,
    CategoryRule,
    FailureMode,
    TaxonomyError,
    classify_failure,
    classify_scenario,
    cross_attack_consistency,
    load_lexicons,
)


class TestScenarioCategories:
    @pytest.mark.parametrize(
        "coc,expected",
        [
            ("Keep distance to the lead vehicle ahead.", "Follow_Vehicle"),
            ("The traffic light is red, so stop before the line.", "Stop_Signal"),
            ("Proceed through the intersection when clear.", "Intersection_Navigation"),
            ("Turn left at the junction.", "Intersection_Navigation"),
            ("Prepare to turn left after the crosswalk.", "Turn_Left"),
            ("A right turn is coming up.", "Turn_Right"),
            ("Overtake the slow truck when the lane is free.", "Passing"),
            ("Stay in lane and hold speed.", "Lane_Keeping"),
            ("Nothing notable in the scene.", "Other"),
        ],
    )
    def test_first_match_wins(self, coc, expected):
        assert classify_scenario(coc) == expected

    def test_priority_order_breaks_overlap(self):
        # both Follow_Vehicle and Stop_Signal keywords present; earlier rule wins
        text = "Follow the lead vehicle until the traffic light turns green."
        assert classify_scenario(text) == "Follow_Vehicle"

    def test_case_and_whitespace_insensitive(self):
        assert classify_scenario("  KEEP   DISTANCE to the LEAD VEHICLE ") == "Follow_Vehicle"

    def test_custom_rules(self):
        rules = (
            CategoryRule(category="Night", keywords=("headlights",), priority=0),
            CategoryRule(category=FALLBACK_CATEGORY, keywords=(), priority=1),
        )
        assert classify_scenario("Headlights on, visibility low.", rules) == "Night"
        assert classify_scenario("plain text", rules) == FALLBACK_CATEGORY

    def test_fallback_rule_rejects_keywords(self):
        with pytest.raises(TaxonomyError):
            CategoryRule(category=FALLBACK_CATEGORY, keywords=("oops",), priority=0)


class TestFailureModes:
    def test_action_word_change(self):
        # canonical lane-change pair: "continue" -> "slow" is an action change
        clean = "Continue in the current lane at steady speed."
        pert = "Slow down in the current lane at steady speed."
        assert classify_failure(clean, pert).labels == frozenset({"action_word_change"})

    def test_object_reference_change(self):
        clean = "Yield to the pedestrian at the crossing."
        pert = "Yield to the cyclist at the crossing."
        assert classify_failure(clean, pert).labels == frozenset({"object_reference_change"})

    def test_shifted_focus_is_additive(self):
        clean = "Stop for the pedestrian."
        pert = "Accelerate past the truck."
        labels = classify_failure(clean, pert).labels
        assert labels == frozenset({"action_word_change", "object_reference_change", "shifted_focus"})

    def test_paraphrase_only_punctuation(self):
        clean = "Keep distance to the lead vehicle."
        pert = "Keep distance to the lead vehicle"
        assert classify_failure(clean, pert).labels == frozenset({"paraphrase_only"})

    def test_paraphrase_only_non_lexicon_words(self):
        clean = "Keep distance to the lead vehicle now."
        pert = "Keep distance to the lead vehicle today."
        assert classify_failure(clean, pert).labels == frozenset({"paraphrase_only"})

    def test_unchanged_pair_raises(self):
        with pytest.raises(TaxonomyError):
            classify_failure("Stop now.", "Stop  now.")

    def test_custom_lexicons(self):
        got = classify_failure(
            "alpha beta", "gamma beta",
            action_lexicon=frozenset({"alpha", "gamma"}),
            object_lexicon=frozenset(),
        )
        assert got.labels == frozenset({"action_word_change"})

    def test_failure_mode_invariants(self):
        with pytest.raises(TaxonomyError):
            FailureMode(labels=frozenset())
        with pytest.raises(TaxonomyError):
            FailureMode(labels=frozenset({"paraphrase_only", "action_word_change"}))
        with pytest.raises(TaxonomyError):
            FailureMode(labels=frozenset({"not_a_label"}))

    def test_all_labels_known(self):
        assert set(FAILURE_LABELS) == {
            "action_word_change", "object_reference_change", "shifted_focus", "paraphrase_only",
        }


class TestLexiconLoading:
    def test_defaults_include_continue(self):
        assert "continue" in DEFAULT_LEXICONS.action_words

    def test_load_from_file(self, tmp_path):
        doc = {
            "action_words": ["go"],
            "object_words": ["thing"],
            "categories": [
                {"category": "A", "keywords": ["x"]},
                {"category": FALLBACK_CATEGORY, "keywords": []},
            ],
        }
        p = tmp_path / "lex.json"
        p.write_text(json.dumps(doc))
        lex = load_lexicons(str(p))
        assert lex.action_words == frozenset({"go"})
        assert lex.rules[0].category == "A"

    def test_missing_fallback_rejected(self, tmp_path):
        doc = {"action_words": [], "object_words": [], "categories": [{"category": "A", "keywords": ["x"]}]}
        p = tmp_path / "lex.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(TaxonomyError):
            load_lexicons(str(p))

    def test_invalid_json_rejected(self, tmp_path):
        p = tmp_path / "lex.json"
        p.write_text("{nope")
        with pytest.raises(TaxonomyError):
            load_lexicons(str(p))


def make_record(clip_id, condition, kind, l2, defense="none", with_coc=True):
    return EvalRecord(
        clip_id=clip_id,
        condition=condition,
        kind=kind,
        defense=defense,
        with_coc=with_coc,
        ade_m=1.0,
        fde_m=1.0,
        delta_ade_m=0.5,
        l2_deviation_m=l2,
        coc_clean="Keep lane." if with_coc else "",
        coc_perturbed="Keep lane." if with_coc else "",
        coc_changed=False,
        word_similarity=1.0,
        seed=42,
        latency_ms=10.0,
        sigma=30.0 if kind == "noise" else None,
    )


class TestCrossAttackConsistency:
    def test_hand_case(self):
        # clip a fails 3 attacks, clip b fails 1, clip c fails none
        records = [
            make_record("a", "noise_30", "noise", 8.0),
            make_record("a", "dark", "dark", 6.0),
            make_record("a", "fog_heavy", "fog", 9.0),
            make_record("a", "bright", "bright", 1.0),
            make_record("b", "noise_30", "noise", 7.0),
            make_record("b", "dark", "dark", 2.0),
            make_record("c", "noise_30", "noise", 0.5),
        ]
        res = cross_attack_consistency(records, threshold_m=5.0, k=3)
        assert res.n_clips == 3
        assert res.counts == {"a": 3, "b": 1, "c": 0}
        assert res.distribution == {0: 1, 1: 1, 3: 1}
        assert res.fraction_at_k == pytest.approx(1 / 3)

    def test_filters_clean_defended_and_ablation(self):
        records = [
            make_record("a", "noise_30", "noise", 8.0),
            make_record("a", "clean", "clean", 0.0),
            make_record("a", "dark", "dark", 9.0, defense="median3"),
            make_record("a", "bright", "bright", 9.0, with_coc=False),
        ]
        res = cross_attack_consistency(records, threshold_m=5.0, k=1)
        assert res.counts == {"a": 1}

    def test_threshold_is_strict(self):
        records = [make_record("a", "noise_30", "noise", 5.0)]
        res = cross_attack_consistency(records, threshold_m=5.0, k=1)
        assert res.counts == {"a": 0}

    def test_empty_raises(self):
        with pytest.raises(TaxonomyError):
            cross_attack_consistency([], threshold_m=5.0, k=3)
        with pytest.raises(TaxonomyError):
            cross_attack_consistency([make_record("a", "noise_30", "noise", 1.0)], k=0)
