"""Knowledge base loading, validation, and the state->strategy mapping."""

from __future__ import annotations

import json

import pytest

from mentigo.errors import ParseError, UnknownState, ValidationError
from mentigo.kb import (
    QUIET,
    STAGE_START,
    default_fixture_path,
    load_knowledge_base,
    serialize_knowledge_base,
    strategies_for_state,
    validate_alias_table,
)

# ---------------------------------------------------------------------------
# Oracle: the catalogue rows transcribed independently of the fixture file.
# Each row lists the guidance strategies by the exact name variants used in
# the state catalogue; ALIASES is the documented variant -> id resolution.
# ---------------------------------------------------------------------------

STATE_ROWS = {
    1: ("Silent", ["Task Assignment", "Restate Task"]),
    2: ("Goal Unclear", ["Task Assignment", "Restate Task", "Probing Guidance"]),
    3: ("Task Misunderstanding", ["Restate Task", "Case Guidance and Examples"]),
    4: ("Goal Prioritization Confusion", ["Task Assignment", "Restate Task"]),
    5: ("Poor Time Management", ["Task Assignment", "Resource Guidance"]),
    6: (
        "No Ideas/Task Breakdown Difficulties",
        ["Brainstorming Guidance", "Encouragement and Motivation", "Immediate Feedback"],
    ),
    7: (
        "Limited Thinking",
        [
            "Creative Flow Selection and Focus",
            "Random Association and Creative Stimulation",
            "Scenario Simulation and Scene Feedback",
            "Case Guidance and Examples",
        ],
    ),
    8: (
        "Insufficient Ideas",
        [
            "Random Association and Creative Stimulation",
            "Encouragement and Motivation",
            "Deep Thinking and Reflection",
        ],
    ),
    9: (
        "Overly Divergent Thinking",
        ["Creative Flow Selection and Focus", "Refutation and Debate", "Systematic Thinking Training"],
    ),
    10: (
        "Shallow Thinking",
        ["Challenge Guidance", "Systematic Thinking Training", "Probing Guidance"],
    ),
    11: (
        "Lack of Critical Thinking",
        ["Critical Thinking Exercises", "Refutation and Debate", "Scenario Simulation and Scene Feedback"],
    ),
    12: (
        "Lack of Systematic Thinking",
        ["Systematic Thinking Training", "Deep Thinking and Reflection", "Critical Thinking Exercises"],
    ),
    13: (
        "Inadequate Information Collection",
        ["Information Gathering and Classification", "Resource Guidance", "Content Review"],
    ),
    14: (
        "Inadequate Information Analysis Skills",
        ["Information Integration Guidance", "Refutation and Debate", "Case Guidance and Examples"],
    ),
    15: (
        "Inadequate Information Integration Skills",
        ["Information Integration Guidance", "Systematic Thinking Training", "Probing Guidance"],
    ),
    16: (
        "Lack of Evaluation Criteria",
        ["Case Guidance and Examples", "Critical Thinking Exercises", "Deep Thinking and Reflection"],
    ),
    17: (
        "Decision Uncertainty",
        ["Resource Guidance", "Task Assignment", "Systematic Thinking Training"],
    ),
    18: ("Insufficient Intrinsic Motivation", ["Encouragement and Motivation", "Immediate Feedback"]),
    19: (
        "Lack of Confidence",
        ["Encouragement and Motivation", "Emotional Support", "Case Guidance and Examples"],
    ),
    20: ("Learning Fatigue", ["Encouragement and Motivation", "Emotional Support"]),
    21: ("Low Mood", ["Encouragement and Motivation", "Emotional Support"]),
    22: ("Conflicts Arising", ["Intergroup Encouragement", "Role Guidance", "Immediate Feedback"]),
    23: ("Normal Progress/Active Questioning", ["Encouragement and Motivation", "Immediate Feedback"]),
}

CANONICAL_STRATEGY_NAMES = {
    "Task Follow-up and Allocation": 1,
    "Task Restatement": 2,
    "Brainstorming Guidance": 3,
    "Random Association and Creative Stimulation": 4,
    "Creative Filtering and Focusing": 5,
    "Case Guidance and Examples": 6,
    "Challenge Guidance": 7,
    "Probing Guidance": 8,
    "System Thinking Training": 9,
    "Critical Thinking Practice": 10,
    "Deep Thinking and Reflection": 11,
    "Rebuttal and Debate": 12,
    "Resource Guidance": 13,
    "Content Review": 14,
    "Information Collection and Classification": 15,
    "Information Integration Guidance": 16,
    "Scenario Simulation and Feedback": 17,
    "Encouragement and Motivation": 18,
    "Emotional Counseling": 19,
    "Immediate Feedback": 20,
}

# Name variants used by the state catalogue that differ from canonical names.
ALIASES = {
    "Task Assignment": 1,
    "Restate Task": 2,
    "Creative Flow Selection and Focus": 5,
    "Systematic Thinking Training": 9,
    "Critical Thinking Exercises": 10,
    "Refutation and Debate": 12,
    "Information Gathering and Classification": 15,
    "Scenario Simulation and Scene Feedback": 17,
    "Intergroup Encouragement": 18,
    "Role Guidance": 18,
    "Emotional Support": 19,
}


def resolve_row(names: list[str]) -> list[int]:
    ids = []
    for name in names:
        sid = CANONICAL_STRATEGY_NAMES.get(name, ALIASES.get(name))
        assert sid is not None, f"oracle cannot resolve {name!r}"
        if sid not in ids:  # variants collapsing onto one strategy keep first slot
            ids.append(sid)
    return ids


@pytest.fixture(scope="module")
def kb():
    return load_knowledge_base(default_fixture_path())


def test_fixture_counts(kb):
    assert len(kb.stages) == 6
    assert len(kb.states) == 23
    assert len(kb.strategies) == 20


def test_state_categories_partition(kb):
    categories = {}
    for state in kb.states:
        categories.setdefault(state.category, []).append(state.id)
    assert len(categories) == 8
    assert sorted(sid for ids in categories.values() for sid in ids) == list(range(1, 24))


def test_strategy_categories_partition_with_counts(kb):
    counts = {}
    for strategy in kb.strategies:
        counts[strategy.category] = counts.get(strategy.category, 0) + 1
    assert counts == {
        "Task Planning and Execution Support": 2,
        "Creative Thinking Stimulation": 5,
        "Deep Thinking and Systematic Analysis": 5,
        "Information Integration and Resource Support": 5,
        "Emotional Support and Motivation Stimulation": 3,
    }


def test_mapping_golden_all_23_rows(kb):
    """strategies_for_state agrees with the catalogue for every row (23/23)."""
    for state_id, (name, strategy_names) in STATE_ROWS.items():
        assert kb.state(state_id).name == name
        assert strategies_for_state(kb, state_id) == resolve_row(strategy_names), (
            f"mapping mismatch for state {state_id} ({name})"
        )


def test_mapping_examples(kb):
    assert strategies_for_state(kb, 19) == [18, 19, 6]
    assert strategies_for_state(kb, 1) == [1, 2]


def test_strategies_for_state_rejects_sentinels_and_bad_ids(kb):
    with pytest.raises(UnknownState):
        strategies_for_state(kb, STAGE_START)
    with pytest.raises(UnknownState):
        strategies_for_state(kb, QUIET)
    with pytest.raises(UnknownState):
        strategies_for_state(kb, 0)
    with pytest.raises(UnknownState):
        strategies_for_state(kb, 24)


def test_all_states_map_to_valid_strategies(kb):
    for state_id in range(1, 24):
        mapped = strategies_for_state(kb, state_id)
        assert mapped, f"state {state_id} has no strategies"
        assert all(1 <= sid <= 20 for sid in mapped)


def test_alias_table_fully_resolved(kb):
    assert validate_alias_table(kb) == []


def test_alias_table_contains_documented_variants(kb):
    for variant, target in ALIASES.items():
        assert kb.alias_table.get(variant) == target, f"alias {variant!r}"
    # Restate Task resolves to the canonical restatement strategy.
    assert kb.alias_table["Restate Task"] == 2


def test_unmapped_alias_reported_by_name(kb):
    doc = json.loads(serialize_knowledge_base(kb))
    doc["aliases"]["Role Guidance"] = None
    broken = load_knowledge_base(json.dumps(doc))
    assert validate_alias_table(broken) == ["Role Guidance"]


def test_round_trip_identity(kb):
    assert load_knowledge_base(serialize_knowledge_base(kb)) == kb


def test_round_trip_is_stable_text(kb):
    text = serialize_knowledge_base(kb)
    assert serialize_knowledge_base(load_knowledge_base(text)) == text


def test_empty_stream_is_parse_error():
    with pytest.raises(ParseError):
        load_knowledge_base("")
    with pytest.raises(ParseError):
        load_knowledge_base(b"   \n  ")


def test_malformed_json_parse_error_carries_location():
    with pytest.raises(ParseError) as err:
        load_knowledge_base('{"stages": [,]}')
    assert "line" in str(err.value)


def test_out_of_range_strategy_reference_names_the_state(kb):
    doc = json.loads(serialize_knowledge_base(kb))
    doc["states"][4]["strategies"] = [21]
    with pytest.raises(ValidationError) as err:
        load_knowledge_base(json.dumps(doc))
    assert any("state 5" in v for v in err.value.violations)


def test_missing_state_is_reported(kb):
    doc = json.loads(serialize_knowledge_base(kb))
    doc["states"] = [s for s in doc["states"] if s["id"] != 14]
    with pytest.raises(ValidationError) as err:
        load_knowledge_base(json.dumps(doc))
    assert any("1..23" in v for v in err.value.violations)


def test_validation_lists_every_violation(kb):
    doc = json.loads(serialize_knowledge_base(kb))
    doc["states"][0]["strategies"] = [99]
    doc["character_prompt"] = ""
    with pytest.raises(ValidationError) as err:
        load_knowledge_base(json.dumps(doc))
    assert len(err.value.violations) >= 2


def test_unresolvable_strategy_name_is_a_violation(kb):
    doc = json.loads(serialize_knowledge_base(kb))
    doc["states"][0]["strategies"] = ["No Such Technique"]
    with pytest.raises(ValidationError) as err:
        load_knowledge_base(json.dumps(doc))
    assert any("No Such Technique" in v for v in err.value.violations)


def test_stage_order_and_terminal(kb):
    assert [s.id for s in kb.stages] == [1, 2, 3, 4, 5, 6]
    assert [s.name for s in kb.stages] == [
        "Problem Discovery",
        "Information Collection",
        "Problem Definition",
        "Solution Ideation",
        "Solution Evaluation",
        "Solution Implementation",
    ]


def test_stage_completion_criteria_present(kb):
    for stage in kb.stages:
        assert 1 <= len(stage.completion_criteria) <= 4
        assert stage.stage_prompt.strip()
        assert stage.definition.strip()


def test_loading_is_pure(kb):
    text = default_fixture_path().read_text(encoding="utf-8")
    assert load_knowledge_base(text) == load_knowledge_base(text)


def test_repo_root_fixture_matches_packaged_copy():
    from pathlib import Path

    repo_copy = Path(__file__).resolve().parent.parent / "kb" / "fixture.json"
    assert repo_copy.exists(), "repo must ship kb/fixture.json"
    assert repo_copy.read_bytes() == default_fixture_path().read_bytes()


def test_exemplars_reference_valid_ids(kb):
    for strategy in kb.strategies:
        for ex in strategy.exemplars:
            assert ex.strategy_id == strategy.id
            assert 1 <= ex.state_id <= 23
            assert 1 <= ex.stage_id <= 6
