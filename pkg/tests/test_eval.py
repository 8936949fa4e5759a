import numpy as np
import pytest

from threatirl.dql import Policy
from threatirl.evaluation import (
    EmptyAggregate,
    ErrorMap,
    aggregate_runs,
    error_map,
    optimal_policy,
    path_encoding,
    pca_discriminate,
    read_error_csv,
    top_eigenpairs,
    value_of_path,
    write_error_csv,
    write_pca_csv,
)
from threatirl.fieldgen import GridSpec, generate_static_field
from threatirl.mdp import Goal, State
from threatirl.oracle import CostVariant, Path, PathDataset, all_starts, generate_expert_dataset, solve

from conftest import quantized, uniform_field


def _path(cells, times=None):
    times = times or [0] * len(cells)
    return Path([State(c, t) for c, t in zip(cells, times)], True, 0.0, np.zeros(2))


def test_value_of_path_uniform(field3, goal3):
    assert value_of_path(_path([8]), field3, goal3) == 1.0
    assert value_of_path(_path([0, 3, 6, 7, 8]), field3, goal3) == 5.0


def test_value_of_path_vertical_hand_sum(field3, goal3):
    # rows 0, 1, 2 sit at y = -1, 0, 1; goal y = 1
    v = value_of_path(_path([1, 4, 7]), field3, goal3, CostVariant.VERTICAL)
    assert v == pytest.approx(3.0 + 2.0 + 1.0 + 0.0)


def test_value_of_path_clamps_time():
    f = uniform_field(2, 2, n_time_steps=2)
    f.values[1] = 3.0
    goal = Goal.at(f.grid)
    assert value_of_path(_path([0, 1, 3], [0, 1, 2]), f, goal) == 1.0 + 3.0 + 3.0


def test_optimal_policy_has_zero_error(small_static, small_dynamic):
    # quantized so both summation orders are exact
    for field, goal in (small_static, small_dynamic):
        field = quantized(field)
        table = solve(field, goal)
        em = error_map(optimal_policy(table), field, goal, table)
        assert em.converged_fraction == 1.0
        assert em.max == 0.0 and em.mean == 0.0


def test_goal_neighbours_have_zero_error(small_static):
    field, goal = small_static
    g = field.grid
    # a policy that always moves toward the goal column, then up
    acts = np.zeros((1, g.n_cells), dtype=int)
    for cell in range(g.n_cells):
        r, c = g.row_col(cell)
        acts[0, cell] = 3 if c < g.cols - 1 else 0
    em = error_map(Policy(acts, False), field, goal)
    table = solve(field, goal)
    for k, cell in enumerate(em.cells):
        nbr_goal = cell in (goal.cell - 1, goal.cell - g.cols)
        if nbr_goal:
            assert em.percent_error[k] == 0.0
    assert em.converged_fraction == 1.0
    assert np.all(em.percent_error >= 0)
    assert table.value(State(0)) > 0


def test_unconverged_rollouts_are_excluded(field3, goal3):
    # Down everywhere except cell 7, which steps right into the goal
    acts = np.full((1, 9), 1)
    acts[0, 7] = 3
    em = error_map(Policy(acts, False), field3, goal3, m_p=10)
    assert em.converged_fraction == pytest.approx(1 / 8)
    assert np.isnan(em.percent_error).sum() == 7
    assert em.max == 0.0


def _emap(values, conv=None):
    values = np.asarray(values, float)
    conv = np.ones(len(values), bool) if conv is None else np.asarray(conv)
    return ErrorMap(np.arange(len(values)), values, conv)


def test_aggregate_two_point_statistics():
    mean, std = aggregate_runs([_emap([1.0, 0.0]), _emap([3.0, 0.0])])
    np.testing.assert_array_equal(mean, [2.0, 0.0])
    np.testing.assert_array_equal(std, [1.0, 0.0])


def test_aggregate_identical_maps():
    _, std = aggregate_runs([_emap([1.0, 5.0])] * 3)
    assert not std.any()


def test_aggregate_filters_unconverged():
    bad = _emap([np.nan, 50.0], [False, True])
    mean, _ = aggregate_runs([_emap([1.0, 2.0]), bad])
    np.testing.assert_array_equal(mean, [1.0, 2.0])
    with pytest.raises(EmptyAggregate):
        aggregate_runs([bad])


def test_encoding_examples():
    g = GridSpec(3, 3)
    np.testing.assert_array_equal(path_encoding(_path([7]), g), np.eye(9)[7])
    np.testing.assert_array_equal(path_encoding(_path([0, 1, 3, 2]), GridSpec(2, 2)), np.ones(4))
    a = path_encoding(_path([0, 1, 2, 5, 8]), g)
    b = path_encoding(_path([0, 3, 6, 7, 8]), g)
    assert np.sum(a != b) >= 2


def test_power_iteration_matches_eigh():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 12)) * np.linspace(3, 0.5, 12)
    cov = np.cov(X.T, bias=True)
    vals, vecs = top_eigenpairs(cov, 3)
    ref_vals, ref_vecs = np.linalg.eigh(cov)
    np.testing.assert_allclose(vals, ref_vals[::-1][:3], rtol=1e-8)
    for v, r in zip(vecs, ref_vecs[:, ::-1].T):
        assert abs(v @ r) == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(vecs @ vecs.T, np.eye(3), atol=1e-8)


def test_pca_identical_datasets_degenerate(field3, goal3):
    ds = generate_expert_dataset(field3, goal3, [State(0)])
    res = pca_discriminate(ds, ds, field3.grid)
    assert res.degenerate and res.components.shape[0] == 0


def test_pca_two_clusters_align_with_separating_axis():
    g = GridSpec(4, 4)
    # cluster A occupies the bottom row plus noise cells, cluster B the top row
    rng = np.random.default_rng(1)
    def make(row):
        paths = []
        for _ in range(30):
            cells = [g.cell(row, c) for c in range(4)]
            cells.append(int(rng.choice([5, 6, 9, 10])))
            paths.append(_path(cells))
        return PathDataset(paths)
    res = pca_discriminate(make(0), make(3), g)
    axis = np.zeros(16)
    axis[[0, 1, 2, 3]] = 1
    axis[[12, 13, 14, 15]] = -1
    axis /= np.linalg.norm(axis)
    assert abs(res.components[0] @ axis) > 0.99
    assert res.explained_variance[0] > 2 * res.explained_variance[1]
    assert np.all(np.diff(res.explained_variance) <= 0)
    sep, spread = res.centroid_separation()
    assert sep > spread


def test_pca_orthonormal_on_real_paths(small_static):
    field, goal = small_static
    starts = all_starts(field.grid, goal)
    a = generate_expert_dataset(field, goal, starts, CostVariant.PURE)
    b = generate_expert_dataset(field, goal, starts, CostVariant.VERTICAL)
    res = pca_discriminate(a, b, field.grid)
    k = res.components.shape[0]
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(k), atol=1e-8)
    assert np.all(np.diff(res.explained_variance) <= 1e-12)


def test_csv_exports(tmp_path, small_static):
    field, goal = small_static
    table = solve(field, goal)
    em = error_map(optimal_policy(table), field, goal, table)
    write_error_csv(em, field.grid, tmp_path / "e.csv")
    head = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert head == "state_index,x,y,percent_error"
    np.testing.assert_array_equal(read_error_csv(tmp_path / "e.csv"), em.percent_error)

    ds = generate_expert_dataset(field, goal, all_starts(field.grid, goal))
    other = generate_expert_dataset(generate_static_field(8, field.grid, n_rbf=4), goal,
                                    all_starts(field.grid, goal))
    res = pca_discriminate(ds, other, field.grid)
    write_pca_csv(res, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].startswith("# explained_variance:")
    assert lines[1] == "path_id,label,pc1,pc2,pc3"
    assert len(lines) == 2 + 2 * 24


def test_occupancy_pc1_tracks_start_position_on_blob_field():
    # exact pure vs vertical paths from every start: they differ often, yet the
    # first component separates the classes by less than their own spread
    from threatirl.fieldgen import central_blob_field
    g = GridSpec(25, 25)
    field, goal = central_blob_field(g), Goal.at(g)
    starts = all_starts(g, goal)
    a = generate_expert_dataset(field, goal, starts, CostVariant.PURE)
    b = generate_expert_dataset(field, goal, starts, CostVariant.VERTICAL)
    assert np.mean([p.cells != q.cells for p, q in zip(a.paths, b.paths)]) > 0.5
    sep, spread = pca_discriminate(a, b, g).centroid_separation()
    assert sep < spread
