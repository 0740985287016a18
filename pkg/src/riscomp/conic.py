"""Convex-solver substrate shared by all block solvers.

A second-order-cone program container plus an interior-point solve (backed by
cvxopt's cone LP solver, which runs a self-dual-embedding interior-point
method and therefore yields usable infeasibility verdicts), and a
backtracking-line-search gradient descent.

Complex-to-real lifting convention used by every caller: a complex scalar z
occupies two adjacent slots (Re z, Im z); a complex vector of length L maps to
2L interleaved real slots. For a fixed complex vector w and variable v,
Re(w^H v) has row coefficients interleave(Re w, Im w) and Im(w^H v) has
interleave(-Im w, Re w).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max_iters"


class ConicError(RuntimeError):
    """Raised when a cone solve cannot produce a usable iterate."""


@dataclass
class Cone:
    """Affine pre-map z = F x + g; 'nonneg' needs z >= 0 elementwise,
    'soc' needs z[0] >= ||z[1:]||_2."""

    kind: str
    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        if self.kind not in ("nonneg", "soc"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        if self.F.shape[0] != self.g.shape[0]:
            raise ValueError("cone F and g row counts disagree")
        if self.kind == "soc" and self.F.shape[0] < 2:
            raise ValueError("soc cone needs at least 2 rows")

    def violation(self, x: np.ndarray) -> float:
        z = self.F @ x + self.g
        if self.kind == "nonneg":
            return float(np.maximum(-z, 0.0).max(initial=0.0))
        return float(max(np.linalg.norm(z[1:]) - z[0], 0.0))


@dataclass
class ConicProgram:
    """minimize c^T x subject to A x = b and every cone's pre-map landing in
    its cone. All data dense; instances here are small."""

    n_vars: int
    c: np.ndarray
    cones: List[Cone] = field(default_factory=list)
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        if self.c.shape[0] != self.n_vars:
            raise ValueError("objective length disagrees with n_vars")
        if (self.A is None) != (self.b is None):
            raise ValueError("A and b must be given together")
        if self.A is not None:
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
            self.b = np.asarray(self.b, dtype=float).ravel()
            if self.A.shape != (self.b.shape[0], self.n_vars):
                raise ValueError("equality block has inconsistent shape")
        for cone in self.cones:
            if cone.F.shape[1] != self.n_vars:
                raise ValueError("cone width disagrees with n_vars")

    def max_violation(self, x: np.ndarray) -> float:
        worst = 0.0
        for cone in self.cones:
            worst = max(worst, cone.violation(x))
        if self.A is not None:
            worst = max(worst, float(np.abs(self.A @ x - self.b).max(initial=0.0)))
        return worst


@dataclass
class SolveReport:
    status: str
    x: Optional[np.ndarray]
    objective: float
    max_violation: float
    iterations: int


def solve_conic(program: ConicProgram, tol_feas: float = 1e-7,
                tol_gap: float = 1e-7, max_iters: int = 200) -> SolveReport:
    """Interior-point solve of a cone program.

    Returns OPTIMAL with a certified-feasible iterate, INFEASIBLE when the
    solver detects primal infeasibility, or MAX_ITERS with the last iterate
    (possibly None) otherwise. Data is equilibrated before the call: the
    objective is sup-norm normalized and every cone block is scaled by its
    largest coefficient (both leave the solution set untouched; a second-order
    cone only tolerates one common positive factor across its rows).
    """
    nonneg = [c for c in program.cones if c.kind == "nonneg"]
    socs = [c for c in program.cones if c.kind == "soc"]

    blocks_G, blocks_h, q_dims = [], [], []
    l_dim = 0
    for cone in nonneg:
        scale = np.maximum(np.max(np.abs(cone.F), axis=1), np.abs(cone.g))
        scale = np.where(scale > 0, scale, 1.0)[:, None]
        blocks_G.append(-cone.F / scale)
        blocks_h.append(cone.g / scale.ravel())
        l_dim += cone.F.shape[0]
    for cone in socs:
        scale = max(float(np.max(np.abs(cone.F))), float(np.max(np.abs(cone.g))),
                    1e-300)
        blocks_G.append(-cone.F / scale)
        blocks_h.append(cone.g / scale)
        q_dims.append(cone.F.shape[0])

    if not blocks_G:
        # cvxopt requires a nonempty G; add a vacuous row.
        blocks_G.append(np.zeros((1, program.n_vars)))
        blocks_h.append(np.ones(1))
        l_dim = 1

    obj_scale = float(np.max(np.abs(program.c)))
    obj_scale = obj_scale if obj_scale > 0 else 1.0

    G = cvx_matrix(np.vstack(blocks_G))
    h = cvx_matrix(np.concatenate(blocks_h))
    c = cvx_matrix(program.c / obj_scale)
    kwargs = {}
    if program.A is not None and program.A.shape[0] > 0:
        a_scale = np.maximum(np.max(np.abs(program.A), axis=1),
                             np.abs(program.b))
        a_scale = np.where(a_scale > 0, a_scale, 1.0)[:, None]
        kwargs["A"] = cvx_matrix(program.A / a_scale)
        kwargs["b"] = cvx_matrix(program.b / a_scale.ravel())

    options = {"show_progress": False, "maxiters": int(max_iters),
               "abstol": tol_gap, "reltol": tol_gap, "feastol": tol_feas}
    try:
        sol = cvx_solvers.conelp(c, G, h, dims={"l": l_dim, "q": q_dims, "s": []},
                                 options=options, **kwargs)
    except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
        raise ConicError(f"cone solver failed: {exc}") from exc

    status = sol["status"]
    x = np.asarray(sol["x"]).ravel() if sol["x"] is not None else None
    iterations = int(sol.get("iterations", 0))
    if status == "optimal":
        return SolveReport(OPTIMAL, x, float(program.c @ x),
                           program.max_violation(x), iterations)
    if status == "primal infeasible":
        return SolveReport(INFEASIBLE, None, np.nan, np.nan, iterations)
    if status == "dual infeasible":
        # certificate of unboundedness, not an iterate
        return SolveReport(MAX_ITERS, None, -np.inf, np.nan, iterations)
    obj = float(program.c @ x) if x is not None else np.nan
    viol = program.max_violation(x) if x is not None else np.nan
    return SolveReport(MAX_ITERS, x, obj, viol, iterations)


@dataclass
class DescentResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool


def armijo_descent(func_grad: Callable, x0: np.ndarray,
                   c_armijo: float = 1e-4, backtrack: float = 0.5,
                   max_iters: int = 500, grad_tol: float = 1e-6,
                   step0: float = 1.0, max_backtracks: int = 60) -> DescentResult:
    """Steepest descent with Armijo backtracking. Minimizes.

    `func_grad(x)` returns (value, gradient). The objective never increases
    across accepted iterates; non-finite trial values reject the step. A
    non-finite value at x0 aborts with a diagnostic.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = func_grad(x)
    if not np.isfinite(f):
        raise ValueError("objective is non-finite at the starting point")
    iterations = 0
    for iterations in range(1, max_iters + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= grad_tol:
            return DescentResult(x, float(f), iterations - 1, True)
        step = step0
        accepted = False
        sq = float(g @ g)
        for _ in range(max_backtracks):
            trial = x - step * g
            ft, gt = func_grad(trial)
            if np.isfinite(ft) and ft <= f - c_armijo * step * sq:
                x, f, g = trial, ft, gt
                accepted = True
                break
            step *= backtrack
        if not accepted:
            return DescentResult(x, float(f), iterations, False)
    return DescentResult(x, float(f), max_iters, False)
