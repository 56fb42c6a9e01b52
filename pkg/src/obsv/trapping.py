"""Invariant (trapping) balls for the plant and for the observer."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    Infeasible,
    NotDissipative,
    NumericalTrouble,
    UnstableClosedLoop,
    UnsupportedRegionForm,
)
from .lmi import Ball1, Ball2, Polytope, SdpProblem, Status, feas_tol, solve
from .model import FluidModel, QuadSystem, coupling_basis, kernel_Q, perturbed_A

log = logging.getLogger(__name__)

Ball = Ball2

DEGENERATE_TOL = 1e-6


class Kind(str, enum.Enum):
    STATE = "State"
    OBSERVER = "Observer"
    FLUID = "Fluid"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class TrappingCert:
    ball: Ball
    alpha: float
    kind: Kind
    witness: tuple | None = None  # (s*, t*, z*) from the SDP
    info: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "kind": self.kind.value,
            "center": self.ball.center.tolist(),
            "radius": self.ball.r,
            "alpha": self.alpha,
        }
        if self.witness is not None:
            s, t, z = self.witness
            out["witness"] = {"s": s, "t": t, "z": np.asarray(z).tolist()}
        if self.info:
            out["info"] = {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))}
        return out

    @classmethod
    def from_dict(cls, doc):
        w = doc.get("witness")
        witness = None if w is None else (float(w["s"]), float(w["t"]), np.array(w["z"], dtype=float))
        return cls(
            Ball(np.array(doc["center"], dtype=float), float(doc["radius"])),
            float(doc["alpha"]),
            Kind(doc["kind"]),
            witness,
            dict(doc.get("info", {})),
        )


def _sym(M):
    return (M + M.T) / 2


def _lam_max_sym(M):
    return float(np.linalg.eigvalsh(_sym(M)).max())


def trap_radius(sys: QuadSystem, d, alpha) -> float:
    """Smallest radius (1/alpha) ||A d + N(d) d|| certified around ``d``."""
    d = np.asarray(d, dtype=float)
    if d.shape != (sys.n,):
        raise DimensionMismatch(f"d must have length {sys.n}")
    if not alpha > 0:
        raise NotDissipative("alpha must be positive")
    Ad = perturbed_A(sys, d)
    top = _lam_max_sym(Ad) + alpha
    if top > feas_tol() * max(1.0, np.abs(Ad).max()):
        raise NotDissipative(f"A_d + alpha I has eigenvalue {top:.4g} > 0 in its symmetric part")
    return float(np.linalg.norm(sys.A @ d + sys.nonlinear(d)) / alpha)


def _kernel_basis(sys, Q):
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (sys.n, sys.n):
        raise DimensionMismatch(f"Q must be {sys.n}x{sys.n}")
    B = sla.null_space(Q) if np.any(Q) else np.eye(sys.n)
    if B.shape[1] and not kernel_Q(sys, B).valid:
        raise AssumptionViolated("N(d)d does not vanish on ker Q")
    return Q, B


def _dissipation_expr(sys, t, z, closed_loop):
    # t * M + (A_z - A) + I, with A_z - A = sum_i z_i J_i
    J = coupling_basis(sys)
    expr = t * closed_loop + np.eye(sys.n)
    for i in range(sys.n):
        expr = expr + z[i] * J[i]
    return expr


def _schur_norm_block(sp, bound, vec, n):
    """[[bound, vec'], [vec, bound I]] >= 0, i.e. ||vec|| <= bound."""
    import cvxpy as cp

    b = cp.reshape(bound, (1, 1), order="C")
    return cp.bmat([[b, cp.reshape(vec, (1, n), order="C")], [cp.reshape(vec, (n, 1), order="C"), bound * np.eye(n)]])


def _solve_trap(sp, solver):
    # the eigenvalue certification below is the real check, so a marginal
    # residual from the backend is tolerated as long as values came back
    rep = solve(sp, solver=solver, check=False)
    if rep.status is Status.INFEASIBLE:
        raise Infeasible(f"{sp.name}: no dissipative center exists ({rep.message})")
    if not rep.values:
        raise NumericalTrouble(f"{sp.name}: {rep.message}")
    if not rep.ok:
        log.info("%s: %s; relying on the independent certificate check", sp.name, rep.message)
    return rep


def state_trap_sdp(sys: QuadSystem, Q=None, solver=None) -> TrappingCert:
    """Smallest invariant ball with center in ker Q, by semidefinite programming.

    Minimizes s subject to ||A z|| <= s, t A + (A_z - A) + I <= 0, t >= 0 and
    Q z = 0; the ball is B_s(z/t) with decay rate 1/t.
    """
    n = sys.n
    if Q is None:
        Q = kernel_Q(sys).Q
    Q, B = _kernel_basis(sys, Q)
    sp = SdpProblem("state_trap")
    s = sp.scalar("s")
    t = sp.scalar("t")
    z = sp.vector("z", n)
    sp.add_psd(_schur_norm_block(sp, s, sys.A @ z, n), name="radius")
    sp.add_nsd(_dissipation_expr(sys, t, z, sys.A), name="dissipation")
    sp.add_nonneg(t, name="t>=0")
    sp.add_eq(Q @ z, name="Qz=0")
    sp.minimize(s)
    rep = _solve_trap(sp, solver)
    s_, t_, z_ = rep["s"], rep["t"], rep["z"]
    info = {
        "minimizer_guaranteed": bool(
            B.shape[1] == 0 or sla.null_space(np.vstack([sys.A, Q])).shape[1] == 0
        ),
        "residual": rep.residual,
        "iterations": rep.iterations or 0,
    }
    if s_ <= DEGENERATE_TOL and np.linalg.norm(z_) <= DEGENERATE_TOL:
        if _lam_max_sym(sys.A) >= 0:
            raise AssumptionViolated("degenerate optimum but A + A' is not negative definite")
        alpha = -_lam_max_sym(sys.A)
        return TrappingCert(Ball(np.zeros(n), 0.0), alpha, Kind.DEGENERATE, (s_, t_, z_), info)
    if t_ <= 0:
        raise NumericalTrouble("state_trap: optimal t is not positive")
    d = z_ / t_
    alpha = 1.0 / t_
    cert = _certify_state(sys, d, alpha, s_, (s_, t_, z_), info)
    return cert


def _certify_state(sys, d, alpha, s, witness, info):
    top = _lam_max_sym(perturbed_A(sys, d))
    if top >= 0:
        raise NumericalTrouble(f"certificate check failed: lambda_max(sym A_d) = {top:.6g} >= 0")
    # never claim a faster decay than the one actually achieved at d
    alpha = min(alpha, -top)
    exact = float(np.linalg.norm(sys.A @ d + sys.nonlinear(d)) / -top)
    info = dict(info, bound_radius=exact)
    return TrappingCert(Ball(d, max(float(s), exact)), float(alpha), Kind.STATE, witness, info)


def check_cert(sys: QuadSystem, cert: TrappingCert, L=None, state_ball=None, tol=None) -> bool:
    """Re-verify the dissipation inequality and the radius bound of a certificate."""
    tol = 10 * feas_tol() if tol is None else tol
    n = sys.n
    if cert.kind is Kind.DEGENERATE:
        return _lam_max_sym(sys.A if L is None else sys.A + np.asarray(L).reshape(n, -1) @ sys.C) < 0
    d, alpha = cert.ball.center, cert.alpha
    M = perturbed_A(sys, d)
    if cert.kind is Kind.OBSERVER:
        LC = np.asarray(L, dtype=float).reshape(n, -1) @ sys.C
        M = M + LC
    scale = max(1.0, np.abs(M).max())
    if _lam_max_sym(M) > -alpha + tol * scale:
        return False
    if cert.kind is Kind.OBSERVER:
        LC = np.asarray(L, dtype=float).reshape(n, -1) @ sys.C
        bound = (
            state_ball.r * np.linalg.norm(LC, 2)
            + np.linalg.norm(LC @ (state_ball.center - d) - sys.A @ d - sys.nonlinear(d))
        ) / alpha
    else:
        bound = np.linalg.norm(sys.A @ d + sys.nonlinear(d)) / alpha
    return bool(cert.ball.r >= bound - tol * max(1.0, bound))


def observer_trap_sdp(sys: QuadSystem, L, state_ball: Ball, Q=None, solver=None) -> TrappingCert:
    """Invariant ball for the observer driven by a plant confined to ``state_ball``."""
    n = sys.n
    L = np.asarray(L, dtype=float).reshape(n, -1)
    LC = L @ sys.C
    eig = np.linalg.eigvals(sys.A + LC).real.max()
    if eig >= 0:
        raise UnstableClosedLoop(f"A + LC has spectral abscissa {eig:.4g} >= 0")
    if Q is None:
        Q = kernel_Q(sys).Q
    if not np.any(LC):
        cert = state_trap_sdp(sys, Q, solver=solver)
        kind = Kind.DEGENERATE if cert.kind is Kind.DEGENERATE else Kind.OBSERVER
        return TrappingCert(cert.ball, cert.alpha, kind, cert.witness, dict(cert.info, delegated=True))
    Q, _ = _kernel_basis(sys, Q)
    d = np.asarray(state_ball.center, dtype=float)
    r = float(state_ball.r)
    nLC = float(np.linalg.norm(LC, 2))
    sp = SdpProblem("observer_trap")
    s = sp.scalar("s")
    t = sp.scalar("t")
    z = sp.vector("z", n)
    gap = s - r * nLC * t
    vec = LC @ (t * d - z) - sys.A @ z
    sp.add_psd(_schur_norm_block(sp, gap, vec, n), name="radius")
    sp.add_nsd(_dissipation_expr(sys, t, z, sys.A + LC), name="dissipation")
    sp.add_nonneg(t, name="t>=0")
    sp.add_eq(Q @ z, name="Qz=0")
    sp.minimize(s)
    rep = _solve_trap(sp, solver)
    s_, t_, z_ = rep["s"], rep["t"], rep["z"]
    info = {"residual": rep.residual, "iterations": rep.iterations or 0, "norm_LC": nLC}
    if s_ <= DEGENERATE_TOL and np.linalg.norm(z_) <= DEGENERATE_TOL:
        alpha = -_lam_max_sym(sys.A + LC)
        return TrappingCert(Ball(np.zeros(n), 0.0), alpha, Kind.DEGENERATE, (s_, t_, z_), info)
    if t_ <= 0:
        raise NumericalTrouble("observer_trap: optimal t is not positive")
    dh = z_ / t_
    M = perturbed_A(sys, dh) + LC
    top = _lam_max_sym(M)
    if top >= 0:
        raise NumericalTrouble(f"observer certificate check failed: lambda_max = {top:.6g} >= 0")
    alpha = min(1.0 / t_, -top)
    bound = (r * nLC + np.linalg.norm(LC @ (d - dh) - sys.A @ dh - sys.nonlinear(dh))) / -top
    info["bound_radius"] = float(bound)
    return TrappingCert(Ball(dh, max(float(s_), float(bound))), alpha, Kind.OBSERVER, (s_, t_, z_), info)


def _max_norm_on_ellipsoid(lam, m, rho2, tol=1e-10):
    """max ||w|| subject to sum_i lam_i (w_i - m_i)^2 <= rho2."""
    lam = np.asarray(lam, dtype=float)
    m = np.asarray(m, dtype=float)
    if rho2 <= 0:
        return float(np.linalg.norm(m)), m.copy()
    lmin = lam.min()
    at_min = np.isclose(lam, lmin, rtol=1e-12, atol=0.0)

    def excess(nu):
        return float(np.sum(lam * (m / (nu * lam - 1.0)) ** 2) - rho2)

    def point(nu):
        return m * nu * lam / (nu * lam - 1.0)

    lo = 1.0 / lmin
    hard = np.all(m[at_min] == 0.0)
    if hard:
        # the multiplier sits at the pole; fill up along the smallest-lambda axis
        others = ~at_min
        w = np.zeros_like(m)
        w[others] = m[others] / (1.0 - lam[others] / lmin)
        slack = rho2 - np.sum(lam[others] * (w[others] - m[others]) ** 2)
        if slack >= 0:
            w[np.argmax(at_min)] = np.sqrt(slack / lmin)
            return float(np.linalg.norm(w)), w
    hi = lo * 2.0
    while excess(hi) > 0:
        hi = lo + 2.0 * (hi - lo)
    a, b = lo, hi
    # bisection on the secular equation; excess is decreasing on (lo, inf)
    while b - a > tol * b:
        mid = 0.5 * (a + b)
        if mid == lo or excess(mid) > 0:
            a = mid
        else:
            b = mid
    w = point(b)
    return float(np.linalg.norm(w)), w


def fluid_trap(fm: FluidModel) -> TrappingCert:
    """Ball B_r(-c) enclosing the ellipsoid outside which ||x + c|| decreases."""
    from .model import fluid_to_system

    sys = fluid_to_system(fm)
    lam, Re, c = fm.lam, fm.Re, fm.c
    b = fm.Lambda @ c / Re + sys.nonlinear(c)
    m = -Re * b / (2 * lam)  # ellipsoid center in w = x + c coordinates
    rho2 = float(np.sum(Re**2 * b**2 / (4 * lam)))
    alpha = float(lam.min() / Re)
    if not np.any(b):
        return TrappingCert(Ball(-c, 0.0), alpha, Kind.DEGENERATE, None, {"ellipsoid_center": (m - c).tolist()})
    r, _ = _max_norm_on_ellipsoid(lam, m, rho2)
    info = {"ellipsoid_level": rho2}
    return TrappingCert(Ball(-c, r), alpha, Kind.FLUID, None, info)


def ellipsoid_of(fm: FluidModel):
    """(lam, center, level) of the ellipsoid in x coordinates."""
    from .model import fluid_to_system

    sys = fluid_to_system(fm)
    b = fm.Lambda @ fm.c / fm.Re + sys.nonlinear(fm.c)
    m = -fm.Re * b / (2 * fm.lam)
    return fm.lam.copy(), m - fm.c, float(np.sum(fm.Re**2 * b**2 / (4 * fm.lam)))


def half_minkowski(b1: Ball, b2: Ball) -> Ball:
    """(b1 + b2) / 2 for Euclidean balls."""
    return Ball((np.asarray(b1.center) + np.asarray(b2.center)) / 2, (b1.r + b2.r) / 2)


def region_contains(Y, b: Ball) -> bool:
    cb = np.asarray(b.center, dtype=float)
    if isinstance(Y, Ball2):
        return bool(np.linalg.norm(Y.center - cb) + b.r <= Y.r)
    if isinstance(Y, Ball1):
        return bool(np.sum(np.abs(cb - Y.center)) + b.r * np.sqrt(cb.size) <= Y.r)
    if isinstance(Y, Polytope):
        if Y.F is None:
            raise UnsupportedRegionForm("containment needs a polytope in face form")
        lhs = Y.F @ cb + b.r * np.linalg.norm(Y.F, axis=1)
        return bool(np.all(lhs <= Y.g))
    raise UnsupportedRegionForm(f"unsupported region {type(Y).__name__}")
