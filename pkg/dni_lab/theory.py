#!/usr/bin/env python3
"""
Theory
Executable dynamics for linear regression trained through a linear SG, the
one-dimensional spurious-critical-point example, and the epsilon-tracking check

Linear-regression system (unnormalised loss 1/2 sum_s (y_s - p_s)^2, p = W Xbar):
    W     <- W - mu * ((alpha+1) p - (beta+1) y + gamma 1) Xbar^T
    omega <- omega - nu * A^T A omega,   omega = (alpha, beta, gamma), A = [p^T | -y^T | 1]
starting from alpha = beta = -1, gamma = 0, i.e. a synthetic gradient of exactly zero.
"""

import csv
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from dni_lab.errors import ConvergenceStallError, ShapeError, ValidationError
from dni_lab.linalg import Matrix, Rng, column_space_projector
from dni_lab.sg_modules import ConstantSG

logger = logging.getLogger(__name__)

MAX_HALVINGS = 60
CONVERGED_FLOOR = 1e-13


@dataclass
class Theorem1State:
    W: Matrix
    alpha: float
    beta: float
    gamma: float
    Xbar: Matrix
    y: Matrix
    B: Matrix
    b_min: float
    B_norm: float
    projector: Matrix
    iteration: int = 0

    @property
    def omega(self) -> np.ndarray:
        return np.array([[self.alpha], [self.beta], [self.gamma]])

    @property
    def S(self) -> int:
        return self.Xbar.shape[1]

    def predictions(self) -> Matrix:
        return self.W @ self.Xbar

    def A_matrix(self, p: Optional[Matrix] = None) -> Matrix:
        p = self.predictions() if p is None else p
        return np.column_stack([p.ravel(), -self.y.ravel(), np.ones(self.S)])

    def error(self, p: Optional[Matrix] = None) -> Matrix:
        p = self.predictions() if p is None else p
        return (self.y - p).T

    def xi(self, p: Optional[Matrix] = None, omega: Optional[np.ndarray] = None) -> Matrix:
        return self.A_matrix(p) @ (self.omega if omega is None else omega)

    def synthetic_gradient(self) -> Matrix:
        p = self.predictions()
        return (self.alpha + 1.0) * p - (self.beta + 1.0) * self.y + self.gamma * np.ones_like(p)

    def f(self, p: Optional[Matrix] = None) -> Matrix:
        """Column-space component of the error"""
        return self.projector @ self.error(p)

    def e_perp(self) -> Matrix:
        e = self.error()
        return e - self.projector @ e

    def combined_norm(self) -> float:
        return float(np.linalg.norm(self.f()) + np.linalg.norm(self.xi()))


@dataclass
class StepInfo:
    mu: float
    nu: float
    halvings: int
    f_norm: float
    xi_norm: float
    e_perp_norm: float
    omega: Tuple[float, float, float]
    accepted: bool = True


def theorem1_init(X: Matrix, y, seed: int = 0, w_std: float = 1.0) -> Theorem1State:
    """
    Args:
        X: S x d samples (one per row)
        y: S targets
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("X must be S x d", X.shape)
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    if y.shape[1] != X.shape[0]:
        raise ShapeError("y must have one entry per sample", X.shape, y.shape)
    Xbar = np.vstack([X.T, np.ones((1, X.shape[0]))])
    B = Xbar.T @ Xbar
    eigenvalues = eigh(B, eigvals_only=True)
    top = float(eigenvalues[-1])
    positive = eigenvalues[eigenvalues > 1e-10 * max(top, 1.0)]
    W = Rng(seed).gaussian(1, Xbar.shape[0], std=w_std)
    return Theorem1State(W=W, alpha=-1.0, beta=-1.0, gamma=0.0, Xbar=Xbar, y=y, B=B,
                         b_min=float(positive[0]), B_norm=top, projector=column_space_projector(Xbar.T))


def theorem1_step(state: Theorem1State) -> Tuple[Theorem1State, StepInfo]:
    """
    One coupled iteration

    nu comes from exact line search on ||A omega||^2. mu starts at
    min(b_min/||B||^2, 1 - ||A^T xi||^4 / (2 ||A A^T xi||^2 ||xi||^2)) and is halved until
    ||f|| + ||xi|| strictly decreases.

    Raises:
        ConvergenceStallError: no decrease after MAX_HALVINGS halvings
    """
    p = state.predictions()
    A = state.A_matrix(p)
    omega = state.omega
    xi = A @ omega
    f_norm = float(np.linalg.norm(state.f(p)))
    xi_norm = float(np.linalg.norm(xi))
    current = f_norm + xi_norm
    e_perp_norm = float(np.linalg.norm(state.e_perp()))
    if current <= CONVERGED_FLOOR * max(1.0, float(np.linalg.norm(state.y))):
        return state, StepInfo(0.0, 0.0, 0, f_norm, xi_norm, e_perp_norm, tuple(omega.ravel()), accepted=False)

    v1 = A.T @ xi
    v2 = A @ v1
    v1_sq = float(np.sum(v1 * v1))
    v2_sq = float(np.sum(v2 * v2))
    nu = v1_sq / v2_sq if v2_sq > 0.0 else 0.0
    new_omega = omega - nu * v1
    mu = state.b_min / state.B_norm ** 2
    if v2_sq > 0.0 and xi_norm > 0.0:
        mu = min(mu, 1.0 - v1_sq ** 2 / (2.0 * v2_sq * xi_norm ** 2))

    direction = state.synthetic_gradient() @ state.Xbar.T
    for halvings in range(MAX_HALVINGS + 1):
        W = state.W - mu * direction
        p_new = W @ state.Xbar
        candidate = replace(state, W=W, alpha=float(new_omega[0, 0]), beta=float(new_omega[1, 0]),
                            gamma=float(new_omega[2, 0]), iteration=state.iteration + 1)
        new_f = float(np.linalg.norm(candidate.f(p_new)))
        new_xi = float(np.linalg.norm(candidate.xi(p_new)))
        if new_f + new_xi < current:
            info = StepInfo(mu, nu, halvings, new_f, new_xi, float(np.linalg.norm(candidate.e_perp())),
                            tuple(new_omega.ravel()))
            return candidate, info
        mu *= 0.5
    raise ConvergenceStallError(f"no decrease of ||f||+||xi|| = {current:.3e} after {MAX_HALVINGS} halvings",
                                state.iteration)


def reduced_step(e: Matrix, xi: Matrix, A: Matrix, B: Matrix, mu: float, nu: float) -> Tuple[Matrix, Matrix]:
    """(e, xi) recursion with A held fixed over the step"""
    e_next = e - mu * (B @ e) + mu * (B @ xi)
    xi_next = xi - nu * (A @ (A.T @ xi))
    return e_next, xi_next


def least_squares_oracle(X: Matrix, y) -> Matrix:
    """Minimum-norm W (1 x (d+1), bias last) minimizing ||y - W Xbar||"""
    X = np.asarray(X, dtype=np.float64)
    Xbar_t = np.hstack([X, np.ones((X.shape[0], 1))])
    solution, *_ = np.linalg.lstsq(Xbar_t, np.asarray(y, dtype=np.float64).ravel(), rcond=None)
    return solution.reshape(1, -1)


def random_problem(S: int, d: int, seed: int) -> Tuple[Matrix, np.ndarray]:
    """Gaussian inputs with targets from a random affine map plus noise"""
    if S < 2 or d < 1:
        raise ValidationError("need S >= 2 and d >= 1")
    rng = Rng(seed)
    X = rng.child(0).gaussian(S, d)
    w = rng.child(1).gaussian(d, 1)
    noise = rng.child(2).gaussian(S, 1, std=0.1)
    return X, (X @ w + 0.5 + noise).ravel()


@dataclass
class Trajectory:
    rows: List[Dict] = field(default_factory=list)
    state: Optional[Theorem1State] = None
    converged: bool = False
    stalled: bool = False
    message: str = ""

    @property
    def monotone(self) -> bool:
        """||f|| + ||xi|| strictly decreased at every recorded step"""
        combined = [r["combined"] for r in self.rows]
        return all(later < earlier for earlier, later in zip(combined, combined[1:]))


def theorem1_run(state: Theorem1State, tol: float = 1e-6, max_iters: int = 200000,
                 w_oracle: Optional[Matrix] = None) -> Trajectory:
    """Iterate until ||f|| + ||xi|| < tol or the budget runs out"""
    if w_oracle is None:
        w_oracle = least_squares_oracle(state.Xbar[:-1].T, state.y)
    trajectory = Trajectory(state=state)

    def row(s: Theorem1State, info: Optional[StepInfo]) -> Dict:
        f_norm = float(np.linalg.norm(s.f()))
        xi_norm = float(np.linalg.norm(s.xi()))
        return {"iteration": s.iteration, "f_norm": f_norm, "xi_norm": xi_norm, "combined": f_norm + xi_norm,
                "alpha": s.alpha, "beta": s.beta, "gamma": s.gamma,
                "w_error": float(np.linalg.norm(s.W - w_oracle)),
                "e_perp_norm": float(np.linalg.norm(s.e_perp())),
                "mu": info.mu if info else 0.0, "nu": info.nu if info else 0.0,
                "halvings": info.halvings if info else 0}

    trajectory.rows.append(row(state, None))
    while trajectory.rows[-1]["combined"] >= tol:
        if state.iteration >= max_iters:
            trajectory.message = f"budget of {max_iters} iterations exhausted at ||f||+||xi|| = " \
                                 f"{trajectory.rows[-1]['combined']:.3e}"
            logger.warning(trajectory.message)
            trajectory.state = state
            return trajectory
        try:
            state, info = theorem1_step(state)
        except ConvergenceStallError as e:
            trajectory.stalled = True
            trajectory.message = str(e)
            logger.warning(f"Linear SG run stalled at iteration {e.iteration}: {e}")
            trajectory.state = state
            return trajectory
        if not info.accepted:
            break
        trajectory.rows.append(row(state, info))
    trajectory.state = state
    trajectory.converged = True
    trajectory.message = f"converged in {state.iteration} iterations"
    logger.info(f"Linear SG run {trajectory.message}")
    return trajectory


def write_trajectory_csv(trajectory: Trajectory, path: str) -> str:
    columns = ["iteration", "f_norm", "xi_norm", "alpha", "beta", "gamma", "w_error", "e_perp_norm",
               "mu", "nu", "halvings"]
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for r in trajectory.rows:
                writer.writerow([r[c] if isinstance(r[c], int) else repr(float(r[c])) for c in columns])
    except OSError as e:
        raise OSError(f"Could not write trajectory {path}: {e}") from e
    logger.info(f"Trajectory written to {path}")
    return path


# ---------------------------------------------------------------------------
# One-dimensional critical point
# ---------------------------------------------------------------------------

CRITICAL_POINT_DATA = np.array([-2.0, -1.0, 1.0, 2.0])


@dataclass
class CriticalPointVerdict:
    a: float
    b: float
    c: float
    true_grad: Tuple[float, float]
    true_grad_norm: float
    sg_update_residual: float
    sg_fit_residual: float
    spurious: bool
    message: str


def subgradient(a: float, b: float, x: np.ndarray = CRITICAL_POINT_DATA) -> Tuple[float, float]:
    """(dL/da, dL/db) of sum_i |a x_i + b| with sign(0) = 0"""
    s = np.sign(a * x + b)
    return float(np.sum(s * x)), float(np.sum(s))


def critical_point_demo(a0: float = 1.0, b0: float = 0.0, c0: float = 0.0, lr_main: float = 1e-3,
                        lr_sg: float = 0.1, iters: int = 5000,
                        use_true_grad: bool = False) -> Tuple[List[Dict], CriticalPointVerdict]:
    """
    Fit f(x) = a x + b to L = sum |a x_i + b| on {-2, -1, 1, 2}

    The SG run updates (a, b) with a ConstantSG's output c and fits c by gradient descent on
    the batch mean of (c - sign(a x_i + b))^2; both updates read the same snapshot.
    """
    x = CRITICAL_POINT_DATA
    h_col = np.zeros((x.size, 1))
    y_col = np.zeros((x.size, 1))
    sg = ConstantSG(1, 1)
    sg.c[...] = c0
    a, b = float(a0), float(b0)
    rows = []
    for t in range(iters):
        h_col[:, 0] = a * x + b
        signs = np.sign(h_col)
        if use_true_grad:
            grad_a, grad_b = subgradient(a, b, x)
        else:
            ghat = sg.forward(h_col, y_col)[:, 0]
            grad_a, grad_b = float(np.sum(ghat * x)), float(np.sum(ghat))
            fit_grad = sg.param_grads(h_col, y_col, 2.0 * (sg.forward(h_col, y_col) - signs) / x.size)["c"]
            sg.c[...] = sg.c - lr_sg * fit_grad
        a -= lr_main * grad_a
        b -= lr_main * grad_b
        rows.append({"iteration": t + 1, "a": a, "b": b, "c": float(sg.c[0, 0])})

    c = float(sg.c[0, 0])
    true_grad = subgradient(a, b, x)
    true_norm = float(np.hypot(*true_grad))
    update_residual = float(np.hypot(c * np.sum(x), c * x.size))
    fit_residual = float(abs(2.0 * (c - np.mean(np.sign(a * x + b)))))
    if use_true_grad:
        spurious = False
        message = f"true-subgradient descent reached a={a:.4f}, b={b:.4f}; true grad norm {true_norm:.1f}"
    else:
        spurious = update_residual < 1e-6 and fit_residual < 1e-6 and true_norm >= 1.0
        if spurious:
            message = f"spurious equilibrium reached; true grad norm {true_norm:.1f}"
        else:
            message = f"no spurious equilibrium: a={a:.4f}, b={b:.4f}, c={c:.4f}; true grad norm {true_norm:.1f}"
    verdict = CriticalPointVerdict(a, b, c, true_grad, true_norm, update_residual, fit_residual, spurious, message)
    return rows, verdict


# ---------------------------------------------------------------------------
# Epsilon tracking
# ---------------------------------------------------------------------------

@dataclass
class EpsTrackingReport:
    delta: float
    per_iteration: List[Tuple[int, bool]]

    @property
    def fraction(self) -> float:
        if not self.per_iteration:
            return 0.0
        return sum(1 for _, ok in self.per_iteration if ok) / len(self.per_iteration)


def eps_tracking_check(records: Sequence[Dict], delta: float) -> EpsTrackingReport:
    """
    Whether the back-propagated SG error stayed below ||dL/dtheta_<h|| (1-delta)/(1+delta)

    Records without monitor values, or with a zero true gradient, are skipped.
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0, 1)")
    factor = (1.0 - delta) / (1.0 + delta)
    verdicts = []
    for record in records:
        record = record if isinstance(record, dict) else record.to_dict()
        error = record.get("backprop_sg_error_norm")
        lower = record.get("lower_grad_norm")
        if error is None or lower is None or lower == 0.0:
            continue
        verdicts.append((int(record["iteration"]), error <= lower * factor))
    return EpsTrackingReport(delta, verdicts)
