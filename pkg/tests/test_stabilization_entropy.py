import itertools
import math

import numpy as np
import pytest

from quantstab import (
    CandidateControls,
    CellFamily,
    InitSpec,
    NoiseSpec,
    Partition,
    ScenarioSet,
    SpanningInstance,
    SpanningTemplate,
    SystemModel,
    ThresholdConstraintError,
    build_R_epsilon,
    entropy_rate,
    is_spanning,
    min_cover_cardinality,
    min_spanning_estimate,
    null_policy,
    satisfies_frequencies,
    zoom_policy,
)
from quantstab.stabilization_entropy import (
    closed_loop_candidates,
    open_loop_states,
    satisfaction_matrix,
)


# --------------------------------------------------------------------------
# Cell families

def test_family_from_partition_and_locate():
    family = CellFamily.from_partition(Partition(low=[0.0], high=[1.0], cells_per_axis=(4,)))
    assert family.count == 4
    idx = family.locate(np.array([[0.1], [0.6], [1.5], [np.inf]]))
    assert idx.tolist() == [0, 2, -1, -1]


def test_whole_space_family_contains_everything_finite():
    family = CellFamily.whole_space(2)
    idx = family.locate(np.array([[1e9, -1e9], [0.0, 0.0], [np.inf, 0.0]]))
    assert idx.tolist() == [0, 0, -1]


def test_zero_dimensional_family():
    family = CellFamily.whole_space(0)
    assert family.locate(np.zeros((5, 0))).tolist() == [0] * 5


def test_overlapping_family_rejected():
    with pytest.raises(ValueError, match="overlap"):
        CellFamily(los=np.array([[0.0], [0.5]]), his=np.array([[1.0], [1.5]]))


# --------------------------------------------------------------------------
# Threshold construction

def test_thresholds_zero_mass_cell_is_vacuous():
    r = build_R_epsilon(np.array([[1.0, 0.0]]).T, np.array([1.0]), 0.05)
    assert r[1, 0, 0] == 1.0


def test_thresholds_full_mass_cell_gets_epsilon():
    r = build_R_epsilon(np.array([[1.0]]), np.array([1.0]), 0.05)
    assert r[0, 0, 0] == 0.05


def test_thresholds_interior_formula():
    r = build_R_epsilon(np.array([[0.9]]), np.array([1.0]), 0.05)
    assert r[0, 0, 0] == pytest.approx(1.05 * 0.1, abs=1e-15)


def test_thresholds_single_set_degenerates_to_epsilon_branch():
    # d = e = f = 1 with all the mass in the one cell
    r = build_R_epsilon(np.ones((1, 1)), np.ones(1), 0.02)
    assert r.shape == (1, 1, 1) and r[0, 0, 0] == 0.02


def test_thresholds_epsilon_too_large_raises_with_offending_value():
    q = np.full((10, 1), 0.01)
    with pytest.raises(ThresholdConstraintError, match="too large"):
        build_R_epsilon(q, np.array([1.0]), 0.05)


def test_thresholds_validate_masses():
    with pytest.raises(ValueError):
        build_R_epsilon(np.array([[1.5]]), np.array([1.0]), 0.05)
    with pytest.raises(ValueError):
        build_R_epsilon(np.array([[0.5]]), np.array([1.0]), 0.0)


def test_instance_threshold_constraints_checked():
    d = CellFamily.from_partition(Partition(low=[0.0], high=[1.0], cells_per_axis=(2,)))
    e = CellFamily.whole_space(0)
    f = CellFamily.whole_space(1)
    with pytest.raises(ThresholdConstraintError):
        SpanningInstance(4, 1, d, e, f, 0.5, np.full((2, 1, 1), 0.2))  # sum(1-r) = 1.6
    ok = SpanningInstance(4, 1, d, e, f, 0.5, np.full((2, 1, 1), 0.6))
    assert ok.thresholds.shape == (2, 1, 1)


# --------------------------------------------------------------------------
# Frequency satisfaction

def _trivial_instance(thresholds, horizon=10):
    d = CellFamily.from_partition(Partition(low=[-1.0], high=[1.0], cells_per_axis=(2,)))
    e = CellFamily.whole_space(0)
    f = CellFamily.whole_space(1)
    return SpanningInstance(horizon, 1, d, e, f, 0.5, np.asarray(thresholds, float))


def test_resting_scenario_satisfies_tight_thresholds():
    model = SystemModel.from_text("states 1\nnoise 1\nx1' = x1 + 0*w1")
    # all mass in cell 1 ([0,1)); cell 0 is vacuous
    inst = _trivial_instance([[[1.0]], [[0.02]]])
    scenario = (np.array([0.5]), np.zeros((10, 1)))
    u = np.zeros((10, 1))
    assert satisfies_frequencies(model, u, scenario, inst)


def test_vacuous_thresholds_accept_anything():
    model = SystemModel.from_text("states 1\nnoise 1\nx1' = 2*x1 + w1")
    inst = _trivial_instance([[[1.0]], [[1.0]]])
    scenario = (np.array([0.9]), np.random.default_rng(0).normal(size=(10, 1)))
    assert satisfies_frequencies(model, np.zeros((10, 1)), scenario, inst)
    assert satisfies_frequencies(model, np.full((10, 1), 3.3), scenario, inst)


def test_insufficient_frequency_fails():
    # next state equals the noise, so the visited cells follow the noise path
    model = SystemModel.from_text("states 1\nnoise 1\nx1' = 0*x1 + w1")
    inst = _trivial_instance([[[1.0]], [[0.5]]], horizon=10)  # need freq >= 0.5 in cell 1
    w = np.array([0.5, 0.5, 0.5, -1, -1, -1, -1, -1, -1, -1])[:, None]
    scenario = (np.array([0.5]), w)  # states: 0.5, 0.5, 0.5, 0.5, -1 ... -> 4/10 in cell 1
    assert not satisfies_frequencies(model, np.zeros((10, 1)), scenario, inst)
    relaxed = _trivial_instance([[[1.0]], [[0.6]]], horizon=10)  # need only 0.4
    assert satisfies_frequencies(model, np.zeros((10, 1)), scenario, relaxed)


def test_relaxing_thresholds_preserves_satisfaction():
    model = SystemModel.from_text("states 1\nnoise 1\nx1' = 0*x1 + w1")
    rng = np.random.default_rng(4)
    for _ in range(20):
        w = rng.uniform(-1, 1, (8, 1))
        scenario = (rng.uniform(-1, 1, 1), w)
        r = rng.uniform(0.5, 1.0, (2, 1, 1))
        tight = _trivial_instance(r, horizon=8)
        loose = _trivial_instance(np.minimum(r + 0.2, 1.0), horizon=8)
        u = np.zeros((8, 1))
        if satisfies_frequencies(model, u, scenario, tight):
            assert satisfies_frequencies(model, u, scenario, loose)


def test_open_loop_states_match_manual_recursion(doubling):
    x0 = np.array([0.25])
    w = np.array([[0.1], [-0.2], [0.3], [0.0]])
    u = np.array([[1.0], [-1.0], [0.5], [0.0]])
    states = open_loop_states(doubling, x0, w, u, 4)
    expected = [0.25]
    for t in range(3):
        expected.append(2 * expected[-1] + w[t, 0] + u[t, 0])
    assert np.allclose(states[:, 0], expected)


def test_open_loop_blowup_lands_outside_all_cells(example2):
    x0 = np.array([50.0, 0.0])
    w = np.zeros((6, 1))
    u = np.zeros((6, 2))
    states = open_loop_states(example2, x0, w, u, 6)
    assert np.all(np.isinf(states[-1]))
    fam = CellFamily.whole_space(2)
    assert fam.locate(states[-1:])[0] == -1


# --------------------------------------------------------------------------
# Spanning and covering

def test_empty_candidate_set_never_spans():
    model = SystemModel.from_text("states 1\nnoise 1\nx1' = x1 + 0*w1")
    inst = _trivial_instance([[[1.0]], [[1.0]]], horizon=5)
    scen = ScenarioSet.sample(InitSpec.fixed([0.5]), NoiseSpec.zero(1), 5, 4, seed=0)
    empty = CandidateControls(sequences=np.zeros((0, 5, 1)), provenance="grid")
    assert is_spanning(model, empty, inst, scen) == (False, 0.0)


def test_single_covering_candidate_spans_fully():
    model = SystemModel.from_text("states 1\nnoise 1\nx1' = x1 + 0*w1")
    inst = _trivial_instance([[[1.0]], [[1.0]]], horizon=5)
    scen = ScenarioSet.sample(InitSpec.fixed([0.5]), NoiseSpec.zero(1), 5, 4, seed=0)
    one = CandidateControls(sequences=np.zeros((1, 5, 1)), provenance="grid")
    spanning, fraction = is_spanning(model, one, inst, scen)
    assert spanning and fraction == 1.0
    assert min_spanning_estimate(model, one, inst, scen, mode="exact") == 1


def test_lemma_construction_spans_for_stable_null_loop(ar1):
    # candidates = the closed loop's own control sequences, thresholds from the
    # empirical masses: the construction spans at sample scale for long horizons
    noise = NoiseSpec.gaussian(1, 0.0, 0.5)
    init = InitSpec.uniform_box([-1], [1])
    horizon, count = 512, 32
    scen = ScenarioSet.sample(init, noise, horizon, count, seed=99)
    policy = null_policy(2, 1)
    candidates, trajs = closed_loop_candidates(ar1, policy, scen)
    assert candidates.count == 1  # the null policy emits one sequence
    d = CellFamily.from_partition(Partition(low=[-3.0], high=[3.0], cells_per_axis=(2,)))
    template = SpanningTemplate(1, d, CellFamily.whole_space(0), CellFamily.whole_space(1), 0.5, 0.1)
    from quantstab.stabilization_entropy import _joint_state_weights, _noise_weights

    r = build_R_epsilon(_joint_state_weights(trajs, template, 0), _noise_weights(scen, template), 0.1)
    inst = SpanningInstance(horizon, 1, template.d_family, template.e_family, template.f_family, 0.5, r)
    spanning, fraction = is_spanning(ar1, candidates, inst, scen)
    assert spanning
    assert fraction > 0.5


# --------------------------------------------------------------------------
# Set-cover solver against a brute-force oracle

def _oracle_min_cover(matrix, needed):
    n_rows = len(matrix)
    if needed <= 0:
        return 0
    for k in range(1, n_rows + 1):
        for combo in itertools.combinations(range(n_rows), k):
            if int(np.any(matrix[list(combo)], axis=0).sum()) >= needed:
                return k
    return math.inf


def test_exact_matches_oracle_on_200_random_tiny_instances():
    rng = np.random.default_rng(31415)
    for _ in range(200):
        rows = int(rng.integers(1, 13))
        cols = int(rng.integers(1, 13))
        matrix = rng.random((rows, cols)) < rng.uniform(0.1, 0.7)
        needed = int(rng.integers(1, cols + 1))
        expected = _oracle_min_cover(matrix, needed)
        assert min_cover_cardinality(matrix, needed, mode="exact") == expected
        greedy = min_cover_cardinality(matrix, needed, mode="greedy")
        assert greedy >= expected
        if expected == math.inf:
            assert greedy == math.inf


def test_two_disjoint_scenarios_need_two_candidates():
    matrix = np.array([[True, False], [False, True]])
    assert min_cover_cardinality(matrix, 2, mode="exact") == 2
    assert min_cover_cardinality(matrix, 2, mode="greedy") == 2


def test_exact_mode_candidate_limit():
    matrix = np.ones((21, 2), dtype=bool)
    with pytest.raises(ValueError, match="exact mode"):
        min_cover_cardinality(matrix, 1, mode="exact")


def test_infeasible_returns_infinity():
    matrix = np.zeros((3, 4), dtype=bool)
    assert min_cover_cardinality(matrix, 1, mode="greedy") == math.inf
    assert min_cover_cardinality(matrix, 1, mode="exact") == math.inf


def test_enlarging_candidate_set_never_reduces_coverage():
    rng = np.random.default_rng(7)
    model = SystemModel.from_text("states 1\nnoise 1\nx1' = 0*x1 + w1")
    inst = _trivial_instance([[[1.0]], [[0.7]]], horizon=6)
    scen = ScenarioSet.sample(InitSpec.uniform_box([-1], [1]), NoiseSpec.uniform(1, -1, 1), 6, 10, seed=1)
    seqs = rng.uniform(-1, 1, (6, 6, 1))
    small = CandidateControls(seqs[:3], "grid")
    large = CandidateControls(seqs, "grid")
    _, frac_small = is_spanning(model, small, inst, scen)
    _, frac_large = is_spanning(model, large, inst, scen)
    assert frac_large >= frac_small


# --------------------------------------------------------------------------
# Entropy rate pipeline

def test_entropy_rate_doubling_zoom_structural_caps(doubling):
    noise = NoiseSpec.uniform(1, -0.05, 0.05)
    init = InitSpec.uniform_box([-1], [1])
    policy = zoom_policy(doubling, 4, 0.75, 3.0, 2.0, noise_mean=noise.mean)
    d = CellFamily.from_partition(Partition(low=[-4.0], high=[4.0], cells_per_axis=(2,)))
    template = SpanningTemplate(1, d, CellFamily.whole_space(0), CellFamily.whole_space(1), 0.75, 0.3)
    points = entropy_rate(doubling, policy, noise, init, template, [4, 6, 8], 32, seed=9)
    assert [p.horizon for p in points] == [4, 6, 8]
    for point in points:
        assert point.n_candidates <= 4**point.horizon
        assert point.feasible
        assert point.s_estimate <= 4**point.horizon
        assert point.rate <= point.capacity + 1e-9
        assert point.capacity == 2.0


def test_entropy_rate_vacuous_thresholds_give_rate_zero(ar1):
    noise = NoiseSpec.gaussian(1, 0.0, 0.5)
    init = InitSpec.uniform_box([-1], [1])
    policy = null_policy(2, 1)
    d = CellFamily.from_partition(Partition(low=[-3.0], high=[3.0], cells_per_axis=(2,)))
    template = SpanningTemplate(1, d, CellFamily.whole_space(0), CellFamily.whole_space(1), 0.5, 0.1)
    points = entropy_rate(ar1, policy, noise, init, template, [4, 8], 16, seed=3, thresholds="vacuous")
    for point in points:
        assert point.s_estimate == 1
        assert point.rate == 0.0


def test_entropy_rate_deterministic_in_seed(ar1):
    noise = NoiseSpec.gaussian(1, 0.0, 0.5)
    init = InitSpec.uniform_box([-1], [1])
    policy = null_policy(4, 1)
    d = CellFamily.from_partition(Partition(low=[-3.0], high=[3.0], cells_per_axis=(2,)))
    template = SpanningTemplate(1, d, CellFamily.whole_space(0), CellFamily.whole_space(1), 0.75, 0.3)
    a = entropy_rate(ar1, policy, noise, init, template, [6], 16, seed=5)
    b = entropy_rate(ar1, policy, noise, init, template, [6], 16, seed=5)
    assert a == b


def test_candidate_grid_generator_and_limit():
    grid = CandidateControls.grid([-1.0, 1.0], horizon=3, control_dim=1)
    assert grid.count == 8 and grid.provenance == "grid"
    with pytest.raises(ValueError, match="limit"):
        CandidateControls.grid([0.0, 1.0], horizon=30, control_dim=1)


def test_closed_loop_candidates_dedupe(ar1):
    scen = ScenarioSet.sample(InitSpec.fixed([0.0]), NoiseSpec.gaussian(1), 5, 8, seed=0)
    candidates, trajs = closed_loop_candidates(ar1, null_policy(2, 1), scen)
    assert candidates.count == 1  # all-null sequences collapse to one
    assert len(trajs) == 8
    assert candidates.provenance == "policy"


def test_satisfaction_matrix_shape(ar1):
    scen = ScenarioSet.sample(InitSpec.fixed([0.0]), NoiseSpec.gaussian(1), 4, 5, seed=0)
    candidates, _ = closed_loop_candidates(ar1, null_policy(2, 1), scen)
    inst = _trivial_instance([[[1.0]], [[1.0]]], horizon=4)
    matrix = satisfaction_matrix(ar1, candidates, inst, scen)
    assert matrix.shape == (1, 5)
    assert matrix.all()
