import csv
from dataclasses import replace

import numpy as np
import pytest

from dni_lab.errors import ShapeError, ValidationError
from dni_lab.theory import (
    critical_point_demo,
    eps_tracking_check,
    least_squares_oracle,
    random_problem,
    reduced_step,
    subgradient,
    theorem1_init,
    theorem1_run,
    theorem1_step,
    write_trajectory_csv,
)


@pytest.fixture
def problem():
    return random_problem(20, 5, seed=1)


def test_initial_synthetic_gradient_is_zero(problem):
    state = theorem1_init(*problem, seed=0)
    assert (state.alpha, state.beta, state.gamma) == (-1.0, -1.0, 0.0)
    np.testing.assert_array_equal(state.synthetic_gradient(), np.zeros((1, 20)))
    assert state.Xbar.shape == (6, 20)


def test_run_decreases_monotonically_and_converges(problem, tmp_path):
    trajectory = theorem1_run(theorem1_init(*problem, seed=0), tol=1e-4, max_iters=50000)
    assert trajectory.converged and not trajectory.stalled
    assert trajectory.monotone
    assert trajectory.rows[-1]["combined"] < 1e-4
    assert trajectory.rows[-1]["w_error"] < 1e-2
    perp = [r["e_perp_norm"] for r in trajectory.rows]
    np.testing.assert_allclose(perp, perp[0], rtol=1e-8)
    with open(write_trajectory_csv(trajectory, str(tmp_path / "t.csv")), newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0][:3] == ["iteration", "f_norm", "xi_norm"]
    assert len(rows) == len(trajectory.rows) + 1


def test_budget_exhaustion_is_reported(problem):
    trajectory = theorem1_run(theorem1_init(*problem, seed=0), tol=1e-12, max_iters=3)
    assert not trajectory.converged
    assert "budget" in trajectory.message
    assert len(trajectory.rows) == 4


def test_step_agrees_with_reduced_recursion(problem):
    state = theorem1_init(*problem, seed=2)
    for _ in range(3):
        state, _ = theorem1_step(state)
    p = state.predictions()
    A = state.A_matrix(p)
    new_state, info = theorem1_step(state)
    e_next, xi_next = reduced_step(state.error(p), state.xi(p), A, state.B, info.mu, info.nu)
    np.testing.assert_allclose(e_next, new_state.error(), atol=1e-10)
    np.testing.assert_allclose(xi_next, A @ new_state.omega, atol=1e-10)
    assert info.halvings >= 0 and info.accepted


def test_least_squares_oracle_residual_is_orthogonal(problem):
    X, y = problem
    W = least_squares_oracle(X, y)
    Xbar = np.vstack([X.T, np.ones((1, X.shape[0]))])
    np.testing.assert_allclose(Xbar @ (y.reshape(1, -1) - W @ Xbar).T, 0.0, atol=1e-9)


def test_init_shape_checks():
    with pytest.raises(ShapeError):
        theorem1_init(np.zeros((4, 2)), np.zeros(3))
    with pytest.raises(ValidationError):
        random_problem(1, 2, seed=0)


def test_subgradient():
    assert subgradient(1.0, 0.0) == (6.0, 0.0)
    assert subgradient(0.0, 0.0) == (0.0, 0.0)
    assert subgradient(-1.0, 5.0) == (0.0, 4.0)


def test_critical_point_is_a_spurious_equilibrium():
    rows, verdict = critical_point_demo()
    assert verdict.spurious
    assert verdict.message == "spurious equilibrium reached; true grad norm 6.0"
    assert verdict.true_grad == (6.0, 0.0)
    assert (verdict.a, verdict.b, verdict.c) == (1.0, 0.0, 0.0)
    assert len(rows) == 5000 and rows[-1]["iteration"] == 5000


def test_true_subgradient_escapes():
    _, verdict = critical_point_demo(use_true_grad=True)
    assert not verdict.spurious
    assert abs(verdict.a) < 1e-2 and abs(verdict.b) < 1e-2


def test_perturbed_start_is_not_spurious():
    _, verdict = critical_point_demo(a0=1.0, b0=1.5, iters=200)
    assert not verdict.spurious
    assert verdict.message.startswith("no spurious equilibrium")


def test_eps_tracking_check():
    records = [
        {"iteration": 0, "backprop_sg_error_norm": 0.1, "lower_grad_norm": 1.0},
        {"iteration": 5, "backprop_sg_error_norm": 0.9, "lower_grad_norm": 1.0},
        {"iteration": 10, "backprop_sg_error_norm": None, "lower_grad_norm": 1.0},
        {"iteration": 15, "backprop_sg_error_norm": 0.0, "lower_grad_norm": 0.0},
    ]
    report = eps_tracking_check(records, delta=0.5)
    assert report.per_iteration == [(0, True), (5, False)]
    assert report.fraction == 0.5
    assert eps_tracking_check([], 0.5).fraction == 0.0
    with pytest.raises(ValidationError):
        eps_tracking_check(records, delta=1.0)


def test_exact_synthetic_gradient_stays_exact(problem):
    state = replace(theorem1_init(*problem, seed=3), alpha=0.0, beta=0.0, gamma=0.0)
    for _ in range(5):
        state, info = theorem1_step(state)
        assert (state.alpha, state.beta, state.gamma) == (0.0, 0.0, 0.0)
        assert info.xi_norm == 0.0 and info.accepted


def test_step_from_the_fixed_point_is_the_identity(problem):
    X, y = problem
    state = replace(theorem1_init(X, y, seed=0), W=least_squares_oracle(X, y), alpha=0.0, beta=0.0, gamma=0.0)
    new_state, info = theorem1_step(state)
    assert not info.accepted
    np.testing.assert_array_equal(new_state.W, state.W)
    assert new_state.omega.ravel().tolist() == [0.0, 0.0, 0.0]
    assert new_state.iteration == state.iteration
