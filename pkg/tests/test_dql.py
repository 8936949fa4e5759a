import math

import numpy as np
import pytest

from threatirl.dql import (
    DQLConfig,
    EpsilonMode,
    Policy,
    QModel,
    SweepContext,
    TrainingDivergence,
    argmax_first,
    dql_sweep,
    epsilon,
    forward,
    greedy_policy,
    init_params,
    load_model,
    n_params,
    run_dql,
    save_model,
)
from threatirl.fieldgen import GridSpec, generate_static_field
from threatirl.mdp import Action, Goal, StateSpace

from conftest import uniform_field


def test_epsilon_schedule():
    cfg = DQLConfig()
    assert epsilon(0, cfg) == pytest.approx(0.95, rel=1e-12)
    assert epsilon(500, cfg) == pytest.approx(0.051 + 0.899 * math.exp(-1), rel=1e-12)
    assert round(epsilon(500, cfg), 5) == 0.38172
    assert epsilon(100_000, cfg) == pytest.approx(0.051, rel=1e-12)
    vals = [epsilon(j, cfg) for j in range(0, 5000, 10)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert all(0.051 <= v <= 0.95 for v in vals)


def test_config_validation():
    with pytest.raises(ValueError):
        DQLConfig(eta_q=0.0)
    with pytest.raises(ValueError):
        DQLConfig(eps0=0.9, eps1=0.5)
    with pytest.raises(ValueError):
        DQLConfig(gamma=0.0)
    with pytest.raises(ValueError):
        DQLConfig(optimizer="rmsprop")


def test_table_defaults():
    cfg = DQLConfig()
    assert (cfg.m_q, cfg.eta_q, cfg.eta_qprime, cfg.eps0, cfg.eps1, cfg.d, cfg.gamma) == (
        25, 0.005, 0.001, 0.051, 0.95, 500, 1.0)


def test_zero_params_give_zero_output():
    arch = (10, 64, 64, 4)
    out = forward(np.zeros(n_params(arch)), np.arange(10.0), arch)
    np.testing.assert_array_equal(out, np.zeros(4))


def test_single_linear_layer_is_affine():
    arch = (2, 4)
    W = np.array([[1.0, 0.0, 2.0, -1.0], [0.0, 1.0, 0.5, 3.0]])
    b = np.array([0.1, 0.2, 0.3, 0.4])
    flat = np.concatenate([W.ravel(), b])
    np.testing.assert_allclose(forward(flat, [2.0, -1.0], arch), [2.1, -0.8, 3.8, -4.6], rtol=1e-15)


def test_forward_is_pure_and_checks_dimension():
    arch = (10, 8, 4)
    flat = init_params(arch, np.random.default_rng(0))
    phi = np.linspace(0, 1, 10)
    np.testing.assert_array_equal(forward(flat, phi, arch), forward(flat, phi, arch))
    with pytest.raises(ValueError):
        forward(flat, np.zeros(15), arch)


def test_argmax_tie_break():
    assert argmax_first(np.array([1.0, 3.0, 3.0, 0.0])) == Action.DOWN
    assert argmax_first(np.zeros(4)) == Action.UP


def test_zero_fixed_point(small_static):
    field, goal = small_static
    model = QModel.create(field, seed=0)
    model.theta[:] = 0.0
    model.theta_prime[:] = 0.0
    cfg = DQLConfig()
    loss = dql_sweep(model, field, goal, (0.0, 0.0), cfg)
    assert loss == 0.0
    assert not model.theta.any() and not model.theta_prime.any()


def test_goal_adjacent_action_has_no_bootstrap(small_static):
    field, goal = small_static
    model = QModel.create(field, seed=0)
    ctx = SweepContext(model, field, goal, (-1.0, -1.0))
    space = ctx.space
    below = goal.cell - field.grid.cols
    k = int(np.flatnonzero(ctx.active == space.state_index(below, 0))[0])
    assert not ctx.bootstrap[k, Action.UP]
    assert ctx.bootstrap[k, Action.DOWN]


def test_target_lag_bound(small_static):
    field, goal = small_static
    model = QModel.create(field, seed=3)
    cfg = DQLConfig()
    ctx = SweepContext(model, field, goal, (-1.0, -1.0))
    for _ in range(5):
        run_dql(model, field, goal, (-1.0, -1.0), cfg, m_q=3, ctx=ctx, return_policy=False)
    before = model.theta_prime.copy()
    dql_sweep(model, field, goal, (-1.0, -1.0), cfg, ctx)
    step = np.linalg.norm(model.theta_prime - before)
    bound = cfg.eta_qprime * np.linalg.norm(model.theta - before)
    assert step <= bound * (1 + 1e-12)


def test_toy_two_cell_mdp_converges_to_minus_one():
    # 1x2 grid, goal on the right; entering it costs exactly -1 (normalized threat 1)
    field = uniform_field(1, 2)
    goal = Goal.at(field.grid)
    assert goal.cell == 1
    model = QModel.create(field, hidden=(16, 16), seed=0)
    cfg = DQLConfig(d=50)
    for _ in range(120):
        policy = run_dql(model, field, goal, (-1.0, 0.0), cfg)
    q = model.q_values(StateSpace(field, goal))[0]
    assert q[Action.RIGHT] == pytest.approx(-1.0, abs=1e-2)
    assert policy(0) == Action.RIGHT


def test_hard_reset_copies_theta(small_static):
    field, goal = small_static
    model = QModel.create(field, seed=1)
    run_dql(model, field, goal, (0.0, 0.0), DQLConfig(loss_reset_threshold=1e9), m_q=3)
    np.testing.assert_array_equal(model.theta, model.theta_prime)
    model = QModel.create(field, seed=1)
    run_dql(model, field, goal, (-1.0, -1.0), DQLConfig(loss_reset_threshold=0.0), m_q=3)
    assert not np.array_equal(model.theta, model.theta_prime)


def test_seeded_runs_are_identical(small_static):
    field, goal = small_static
    policies = []
    for _ in range(2):
        model = QModel.create(field, seed=9)
        policies.append(run_dql(model, field, goal, (-1.0, -1.0), DQLConfig(), m_q=40))
    assert policies[0] == policies[1]


@pytest.mark.parametrize("mode", list(EpsilonMode))
def test_epsilon_modes_run(small_static, mode):
    field, goal = small_static
    model = QModel.create(field, seed=2)
    run_dql(model, field, goal, (-1.0, -1.0), DQLConfig(epsilon_mode=mode), m_q=5)
    assert model.j == 5


def test_sweep_loss_decreases_in_most_runs():
    g = GridSpec(4, 4)
    field = generate_static_field(4, g, n_rbf=3)
    goal = Goal.at(g)
    cfg = DQLConfig()
    decreased = 0
    for seed in range(10):
        model = QModel.create(field, seed=seed)
        ctx = SweepContext(model, field, goal, (-1.0, -1.0))
        losses = [dql_sweep(model, field, goal, (-1.0, -1.0), cfg, ctx) for _ in range(400)]
        decreased += np.mean(losses[-50:]) <= np.mean(losses[:50])
    assert decreased >= 9


def test_divergence_raises(small_static):
    field, goal = small_static
    model = QModel.create(field, seed=0)
    model.theta[:] = np.inf
    with pytest.raises(TrainingDivergence), np.errstate(invalid="ignore"):
        dql_sweep(model, field, goal, (-1.0, -1.0), DQLConfig())


def test_weights_must_match_variant(small_static):
    field, goal = small_static
    model = QModel.create(field, seed=0)
    with pytest.raises(ValueError):
        SweepContext(model, field, goal, (-1.0, -1.0, -1.0))


def test_policy_table_clamps_time():
    p = Policy(np.array([[0, 1], [2, 3]]), dynamic=True)
    assert p(1, 0) == 1 and p(1, 1) == 3 and p(1, 40) == 3


def test_model_roundtrip(tmp_path, small_static):
    field, goal = small_static
    model = QModel.create(field, seed=4)
    run_dql(model, field, goal, (-1.0, -0.5), DQLConfig(), m_q=7)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.j == 7 and back.arch == model.arch and back.scale == model.scale
    np.testing.assert_array_equal(back.theta, model.theta)
    np.testing.assert_array_equal(back.theta_prime, model.theta_prime)
    assert greedy_policy(back, field, goal) == greedy_policy(model, field, goal)
    assert back.rng.random() == model.rng.random()
