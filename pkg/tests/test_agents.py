import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import RENORM_MASKED
from turntaking.agents import (NEXT_ACTION_RANGES, Context, RuleAgent, RuleAgentSpec, classify_context,
                               draw_block_queue, generate_policy_table, make_rule_agent,
                               next_action_distribution)
from turntaking.core import Action, BehaviorType, sample_index

UNIFORM_SIZES = np.full(5, 0.2)


def spec_with(table, btype=BehaviorType.STOCHASTIC):
    return RuleAgentSpec(0, btype, np.asarray(table, float), UNIFORM_SIZES)


def test_table_ranges_for_deterministic_rows(rng):
    passive = generate_policy_table(BehaviorType.PASSIVE, rng)
    assert tuple(passive[Context.ONLY_AGENT_INDICATED]) == (0.0, 0.0, 1.0)
    aggressive = generate_policy_table(BehaviorType.AGGRESSIVE, rng)
    assert tuple(aggressive[Context.AGENT_AND_OTHERS_INDICATED]) == (0.0, 0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(BehaviorType)))
def test_sampled_tables_are_normalized_ranges(seed, btype):
    rng = np.random.default_rng(seed)
    table = generate_policy_table(btype, rng)
    assert np.allclose(table.sum(axis=1), 1.0, atol=1e-9)
    lo = np.asarray(NEXT_ACTION_RANGES[btype])[..., 0]
    hi = np.asarray(NEXT_ACTION_RANGES[btype])[..., 1]
    # normalization moves entries by at most the row-sum slack
    slack = np.maximum(np.abs(hi.sum(axis=1) - 1), np.abs(lo.sum(axis=1) - 1))[:, None] + 1e-9
    assert (table >= lo / (1 + slack) - 1e-9).all() and (table <= hi / (1 - slack) + 1e-9).all()


def test_stochastic_passed_last_row(rng):
    for _ in range(20):
        table = generate_policy_table(BehaviorType.STOCHASTIC, rng)
        p, i, a = table[Context.PASSED_LAST]
        # undo the normalization using the raw-range bounds on the row sum
        assert 0.35 / 1.15 <= p <= 0.45 / 0.90
        assert abs(p + i + a - 1.0) < 1e-12


@pytest.mark.parametrize("last,others,ctx", [
    (Action.INDICATE, False, Context.ONLY_AGENT_INDICATED),
    (Action.INDICATE, True, Context.AGENT_AND_OTHERS_INDICATED),
    (Action.PASS, True, Context.PASSED_LAST),
    (Action.PASS, False, Context.PASSED_LAST),
    (Action.PLACE, False, Context.PLACED_LAST),
])
def test_classify_context(last, others, ctx):
    assert classify_context(last, others) == ctx


def test_passive_places_after_lone_indicate(rng):
    spec = make_rule_agent(0, BehaviorType.PASSIVE, rng)
    assert next_action_distribution(spec, Context.ONLY_AGENT_INDICATED, False, 3) == (0.0, 0.0, 1.0)


def test_masked_row_renormalizes():
    table = [[0.40, 0.55, 0.05]] * 4
    dist = next_action_distribution(spec_with(table), Context.PASSED_LAST, True, 3)
    assert dist == pytest.approx(RENORM_MASKED, abs=1e-12)
    dist = next_action_distribution(spec_with(table), Context.PASSED_LAST, False, 0)
    assert dist == pytest.approx(RENORM_MASKED, abs=1e-12)


def test_all_zero_masked_row_falls_back_to_indicate():
    table = [[0.0, 0.0, 1.0]] * 4
    assert next_action_distribution(spec_with(table), Context.ONLY_AGENT_INDICATED, True, 2) == (0.0, 1.0, 0.0)


def test_start_uses_passed_last_without_place():
    table = [[0, 0, 1], [0, 0, 1], [0.4, 0.55, 0.05], [1, 0, 0]]
    agent = RuleAgent(spec_with(table))
    assert agent.context([None]) == Context.START
    assert agent.true_distribution([None], 5) == pytest.approx(RENORM_MASKED)


def test_sample_point_mass(rng):
    assert sample_index([0, 0, 0, 1.0, 0], rng) == 3


def test_sampling_is_reproducible():
    a = [sample_index([0.2] * 5, np.random.default_rng(7)) for _ in range(10)]
    b = [sample_index([0.2] * 5, np.random.default_rng(7)) for _ in range(10)]
    assert a == b


def test_bad_distributions_rejected():
    with pytest.raises(ValueError):
        RuleAgentSpec(0, BehaviorType.PASSIVE, np.full((4, 3), 1 / 3), np.full(5, 0.18))
    with pytest.raises(ValueError):
        spec_with(np.full((4, 3), 0.3))
    with pytest.raises(ValueError):
        spec_with(np.full((3, 3), 1 / 3))


def test_spec_round_trip(rng):
    spec = make_rule_agent(2, BehaviorType.STOCHASTIC, rng)
    back = RuleAgentSpec.from_dict(spec.to_dict())
    assert np.array_equal(back.policy_table, spec.policy_table)
    assert back.btype == spec.btype and back.agent_id == 2


def test_spec_arrays_read_only(rng):
    spec = make_rule_agent(0, BehaviorType.PASSIVE, rng)
    with pytest.raises(ValueError):
        spec.policy_table[0, 0] = 0.5


def test_block_queue_sizes(rng):
    spec = make_rule_agent(0, BehaviorType.AGGRESSIVE, rng)
    q = draw_block_queue(spec, 50, rng)
    assert len(q) == 50 and set(q) <= {1, 2, 3, 4, 5}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(BehaviorType)),
       st.sampled_from(list(Context)), st.booleans(), st.integers(0, 3))
def test_true_distributions_normalized(seed, btype, ctx, first, left):
    spec = make_rule_agent(0, btype, np.random.default_rng(seed))
    d = next_action_distribution(spec, ctx, first, left)
    assert abs(sum(d) - 1.0) <= 1e-9 and min(d) >= 0.0
    if first or left == 0 or ctx == Context.START:
        assert d[2] == 0.0
