"""Semidefinite programs and robust LMI reformulations.

Problems are modeled with cvxpy affine expressions. Every LMI is stored in
the form ``sym(E) >= margin * I``; after a solve each one is re-checked by an
eigenvalue computation on the returned values rather than trusting the
backend's own residuals.
"""
from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import EmptyRegion, Infeasible, NumericalTrouble, UnsupportedRegionForm

log = logging.getLogger(__name__)

DEFAULT_SOLVER = "CLARABEL"


def feas_tol() -> float:
    """Feasibility tolerance for re-verification; OBSV_SOLVER_TOL overrides."""
    return float(os.environ.get("OBSV_SOLVER_TOL", "1e-7"))


def strict_margin(A) -> float:
    """Margin used to model a strict inequality ``X < 0`` as ``X <= -eps I``."""
    return 1e-6 * (1.0 + float(np.linalg.norm(A, 2)))


def sym(E):
    return (E + E.T) / 2


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass
class Lmi:
    name: str
    expr: cp.Expression  # square; the constraint is sym(expr) >= margin I
    margin: float = 0.0


@dataclass
class SdpProblem:
    name: str = "sdp"
    variables: dict = field(default_factory=dict)
    lmis: list = field(default_factory=list)
    equalities: list = field(default_factory=list)
    sense: str = "min"
    objective: cp.Expression | None = None

    # -- variables
    def _declare(self, name, var):
        if name in self.variables:
            raise ValueError(f"variable {name!r} already declared")
        self.variables[name] = var
        return var

    def scalar(self, name):
        return self._declare(name, cp.Variable(name=name))

    def vector(self, name, n):
        return self._declare(name, cp.Variable(n, name=name))

    def symmetric(self, name, n):
        return self._declare(name, cp.Variable((n, n), symmetric=True, name=name))

    def matrix(self, name, rows, cols):
        return self._declare(name, cp.Variable((rows, cols), name=name))

    # -- constraints
    def _check_expr(self, expr, what):
        expr = cp.Constant(expr) if not isinstance(expr, cp.Expression) else expr
        if not expr.is_affine():
            raise ValueError(f"{what}: expression is not affine")
        declared = {id(v) for v in self.variables.values()}
        for v in expr.variables():
            if id(v) not in declared:
                raise ValueError(f"{what}: references undeclared variable {v.name()!r}")
        return expr

    def add_psd(self, expr, name=None, margin=0.0):
        """Require ``sym(expr) >= margin * I``."""
        name = name or f"lmi{len(self.lmis)}"
        expr = self._check_expr(expr, name)
        if expr.ndim == 0:
            expr = cp.reshape(expr, (1, 1), order="C")
        elif expr.ndim == 1:
            expr = cp.diag(expr)
        if expr.shape[0] != expr.shape[1]:
            raise ValueError(f"{name}: LMI expression must be square, got {expr.shape}")
        self.lmis.append(Lmi(name, expr, float(margin)))
        return name

    def add_nsd(self, expr, name=None, margin=0.0):
        """Require ``sym(expr) <= -margin * I``."""
        return self.add_psd(-expr, name=name, margin=margin)

    def add_nonneg(self, expr, name=None):
        return self.add_psd(expr, name=name)

    def add_eq(self, expr, name=None):
        name = name or f"eq{len(self.equalities)}"
        self.equalities.append((name, self._check_expr(expr, name)))
        return name

    def minimize(self, expr):
        self.sense, self.objective = "min", self._check_expr(expr, "objective")

    def maximize(self, expr):
        self.sense, self.objective = "max", self._check_expr(expr, "objective")

    def to_cvxpy(self):
        cons = []
        for lmi in self.lmis:
            E = sym(lmi.expr)
            m = E.shape[0]
            if m == 1:
                cons.append(E >= lmi.margin)
            else:
                cons.append(E - lmi.margin * np.eye(m) >> 0)
        cons += [e == 0 for _, e in self.equalities]
        obj = self.objective if self.objective is not None else cp.Constant(0.0)
        goal = cp.Minimize(obj) if self.sense == "min" else cp.Maximize(obj)
        return cp.Problem(goal, cons)

    def dump(self, fh):
        """Write a sparse coefficient listing of all constraints.

        One line per nonzero: ``constraint block row col var coef``. Variable
        id 0 is the constant term; ids >= 1 index scalar entries listed in
        the header (upper triangle only for symmetric variables). Block 1 is
        an LMI, block 2 an equality, constraint 0 the objective.
        """
        entries = []
        for vname, v in self.variables.items():
            shape = v.shape if v.shape else (1,)
            if len(shape) == 1:
                idx = [(i,) for i in range(shape[0])] if v.shape else [()]
            elif v.is_symmetric():
                idx = [(i, j) for i in range(shape[0]) for j in range(i, shape[1])]
            else:
                idx = [(i, j) for i in range(shape[0]) for j in range(shape[1])]
            entries += [(vname, v, ix) for ix in idx]
        fh.write(f"# sdp {self.name} sense={self.sense}\n")
        for k, (vname, _, ix) in enumerate(entries, start=1):
            fh.write(f"# var {k} {vname}{list(ix) if ix else ''}\n")

        saved = {id(v): v.value for v in self.variables.values()}

        def zero_all():
            for v in self.variables.values():
                v.value = np.zeros(v.shape) if v.shape else 0.0

        def coeffs(expr):
            zero_all()
            base = np.atleast_2d(np.asarray(expr.value, dtype=float))
            out = [(0, base)]
            for k, (_, v, ix) in enumerate(entries, start=1):
                zero_all()
                val = np.zeros(v.shape) if v.shape else np.array(0.0)
                if v.shape == ():
                    val = 1.0
                else:
                    val[ix] = 1.0
                    if len(ix) == 2 and v.is_symmetric():
                        val[ix[::-1]] = 1.0
                v.value = val
                out.append((k, np.atleast_2d(np.asarray(expr.value, dtype=float)) - base))
            return out

        try:
            rows = []
            if self.objective is not None:
                rows += [(0, 0, c) for c in coeffs(self.objective)]
            for cid, lmi in enumerate(self.lmis, start=1):
                expr = sym(lmi.expr) - lmi.margin * np.eye(lmi.expr.shape[0])
                rows += [(cid, 1, c) for c in coeffs(expr)]
            for cid, (_, e) in enumerate(self.equalities, start=len(self.lmis) + 1):
                rows += [(cid, 2, c) for c in coeffs(e)]
            for cid, block, (var, mat) in rows:
                for (i, j) in zip(*np.nonzero(np.abs(mat) > 0)):
                    fh.write(f"{cid} {block} {i + 1} {j + 1} {var} {mat[i, j]:.17g}\n")
        finally:
            for v in self.variables.values():
                v.value = saved[id(v)]


@dataclass(frozen=True)
class SolveReport:
    status: Status
    values: dict
    objective: float | None
    residual: float  # worst violation found by re-verification (>= 0)
    iterations: int | None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    def __getitem__(self, name):
        return self.values[name]


def lmi_violation(lmi: Lmi) -> float:
    """Scaled violation of one LMI at the variables' current values (<= 0 means satisfied)."""
    E = np.atleast_2d(np.asarray(lmi.expr.value, dtype=float))
    E = (E + E.T) / 2
    lo = float(np.linalg.eigvalsh(E).min()) - lmi.margin
    scale = max(1.0, float(np.max(np.abs(E))))
    return -lo / scale


def solve(problem: SdpProblem, solver=None, check=True, tol=None, **solver_opts) -> SolveReport:
    """Solve with the cvxpy backend and re-verify feasibility independently.

    With ``check=True`` an Infeasible or NumericalTrouble outcome raises;
    otherwise it is reported through ``SolveReport.status``.
    """
    tol = feas_tol() if tol is None else tol
    prob = problem.to_cvxpy()
    solver = solver or DEFAULT_SOLVER
    try:
        prob.solve(solver=solver, **solver_opts)
    except cp.error.SolverError as exc:
        report = SolveReport(Status.NUMERICAL_TROUBLE, {}, None, np.inf, None, str(exc))
        return _finish(report, problem, check)

    iters = getattr(prob.solver_stats, "num_iters", None)
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        report = SolveReport(Status.INFEASIBLE, {}, None, np.inf, iters, prob.status)
        return _finish(report, problem, check)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        report = SolveReport(Status.NUMERICAL_TROUBLE, {}, None, np.inf, iters, prob.status)
        return _finish(report, problem, check)

    worst = 0.0
    for lmi in problem.lmis:
        worst = max(worst, lmi_violation(lmi))
    for _, e in problem.equalities:
        val = np.asarray(e.value, dtype=float)
        worst = max(worst, float(np.max(np.abs(val))) if val.size else 0.0)
    values = {
        name: (float(v.value) if v.shape == () else np.array(v.value, dtype=float))
        for name, v in problem.variables.items()
    }
    status, msg = Status.OPTIMAL, prob.status
    if worst > tol:
        status = Status.NUMERICAL_TROUBLE
        msg = f"re-verification failed: violation {worst:.3e} > {tol:.1e} ({prob.status})"
    elif prob.status == cp.OPTIMAL_INACCURATE:
        log.warning("%s: solver reported an inaccurate optimum; constraints re-verified", problem.name)
    report = SolveReport(status, values, float(prob.value), worst, iters, msg)
    return _finish(report, problem, check)


def _finish(report, problem, check):
    if check and report.status is Status.INFEASIBLE:
        raise Infeasible(f"{problem.name}: infeasible ({report.message})")
    if check and report.status is Status.NUMERICAL_TROUBLE:
        raise NumericalTrouble(f"{problem.name}: {report.message}")
    return report


# --- uncertainty regions -------------------------------------------------


@dataclass(frozen=True)
class Ball2:
    center: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.r >= 0:
            raise ValueError("radius must be nonnegative")

    @property
    def n(self):
        return self.center.shape[0]


@dataclass(frozen=True)
class Ball1:
    center: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.r >= 0:
            raise ValueError("radius must be nonnegative")

    @property
    def n(self):
        return self.center.shape[0]

    def vertices(self):
        n = self.n
        E = np.eye(n) * self.r
        return np.vstack([self.center + E, self.center - E])


@dataclass(frozen=True)
class Polytope:
    """Convex polytope given by vertices, by faces ``{x : F x <= g}``, or both."""

    verts: np.ndarray | None = None
    F: np.ndarray | None = None
    g: np.ndarray | None = None

    def __post_init__(self):
        if self.verts is not None:
            v = np.atleast_2d(np.asarray(self.verts, dtype=float))
            if v.shape[0] == 0:
                raise EmptyRegion("polytope vertex list is empty")
            object.__setattr__(self, "verts", v)
        if self.F is not None:
            object.__setattr__(self, "F", np.atleast_2d(np.asarray(self.F, dtype=float)))
            object.__setattr__(self, "g", np.asarray(self.g, dtype=float).ravel())
        if self.verts is None and self.F is None:
            raise EmptyRegion("polytope needs vertices or faces")

    @property
    def n(self):
        return self.verts.shape[1] if self.verts is not None else self.F.shape[1]

    @property
    def center(self):
        if self.verts is None:
            raise UnsupportedRegionForm("face-only polytope has no vertex list")
        return self.verts.mean(axis=0)

    def vertices(self):
        if self.verts is None:
            raise UnsupportedRegionForm("face-only polytope has no vertex list")
        return self.verts


def region_vertices(region) -> np.ndarray:
    if isinstance(region, (Ball1, Polytope)):
        return region.vertices()
    raise UnsupportedRegionForm(f"{type(region).__name__} has no finite vertex set")


def sample_region(region, m, rng) -> np.ndarray:
    """Draw ``m`` points from inside the region (uniform for balls)."""
    if isinstance(region, Ball2):
        n = region.n
        u = rng.standard_normal((m, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = region.r * rng.random(m) ** (1.0 / n)
        return region.center + u * rad[:, None]
    if isinstance(region, Ball1):
        n = region.n
        # uniform on the l1 ball: signed Dirichlet weights scaled by U^(1/n)
        w = rng.exponential(size=(m, n))
        w /= w.sum(axis=1, keepdims=True)
        w *= rng.choice([-1.0, 1.0], size=(m, n))
        rad = region.r * rng.random(m) ** (1.0 / n)
        return region.center + w * rad[:, None]
    V = region_vertices(region)
    lam = rng.dirichlet(np.ones(V.shape[0]), size=m)
    return lam @ V


# --- robust LMIs ---------------------------------------------------------


def robust_lmi_vertices(F0, Fs, region):
    """LMIs ``F0 + sum_i (y_v - c)_i Fs[i] >= 0`` at every vertex ``y_v``.

    ``F0`` is the constraint evaluated at the region center ``c``.
    """
    V = region_vertices(region)
    if V.shape[0] == 0:
        raise EmptyRegion("region has no vertices")
    c = region.center
    out = []
    for v in V:
        delta = v - c
        expr = F0
        for di, Fi in zip(delta, Fs):
            if di != 0.0:
                expr = expr + di * Fi
        out.append(expr)
    return out


def robust_lmi_ball(problem: SdpProblem, F0, Fs, r, prefix="rb"):
    """Sufficient LMIs for ``F0 + sum_i d_i Fs[i] >= 0`` on ``||d||_2 <= r``.

    Declares fresh symmetric S, Q on ``problem`` and returns the pair of
    expressions ``2 F0 - S - Q`` and the block-arrow matrix with diagonal
    ``S, Q, ..., Q`` and off-diagonal blocks ``r Fs[i]``, both required PSD.
    """
    m = F0.shape[0]
    k = 0
    while f"{prefix}{k}_S" in problem.variables:
        k += 1
    S = problem.symmetric(f"{prefix}{k}_S", m)
    Q = problem.symmetric(f"{prefix}{k}_Q", m)
    Fs = list(Fs)
    first = [S] + [r * Fi for Fi in Fs]
    rows = [first]
    Z = np.zeros((m, m))
    for i, Fi in enumerate(Fs):
        row = [r * Fi.T]
        row += [Q if j == i else Z for j in range(len(Fs))]
        rows.append(row)
    arrow = cp.bmat(rows)
    return [2 * F0 - S - Q, arrow], (S, Q)


def add_robust_psd(problem, F0, Fs, region, name, method=None, margin=0.0):
    """Impose ``F0 + sum_i (y - c)_i Fs[i] >= margin I`` for all y in ``region``.

    Euclidean balls use the arrow-matrix reformulation, 1-norm balls and
    polytopes enumerate vertices. ``method`` ('ball' or 'vertices') forces
    one route.
    """
    m = F0.shape[0]
    if margin:
        F0 = F0 - margin * np.eye(m)
    if method is None:
        method = "ball" if isinstance(region, Ball2) else "vertices"
    if method == "ball":
        if isinstance(region, Ball2):
            r = region.r
        elif isinstance(region, Ball1):
            r = region.r  # the 1-ball sits inside the 2-ball of equal radius
        else:
            raise UnsupportedRegionForm("ball reformulation needs a ball region")
        exprs, _ = robust_lmi_ball(problem, sym(F0), [sym(F) for F in Fs], r, prefix=name)
        for k, e in enumerate(exprs):
            problem.add_psd(e, name=f"{name}[{k}]")
        return
    for k, e in enumerate(robust_lmi_vertices(F0, Fs, region)):
        problem.add_psd(e, name=f"{name}[v{k}]")
