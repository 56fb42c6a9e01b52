"""Observer gain synthesis: local, iterative and global designs."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import cvxpy as cp
import numpy as np
from scipy import linalg as sla

from .errors import (
    Infeasible,
    IterationStalled,
    NonPositiveArgument,
    NumericalTrouble,
    ObserverTrapInfeasible,
    UnstableClosedLoop,
)
from .lmi import (
    Ball1,
    Ball2,
    Polytope,
    SdpProblem,
    Status,
    add_robust_psd,
    feas_tol,
    sample_region,
    solve,
    strict_margin,
)
from .model import QuadSystem, coupling_basis, n_norm, perturbed_A, sn_basis
from .trapping import (
    Ball,
    TrappingCert,
    half_minkowski,
    observer_trap_sdp,
    region_contains,
    state_trap_sdp,
)

log = logging.getLogger(__name__)

ALPHA1_DEFAULT = 1e-3
ALPHA2_DEFAULT = 1e3
PCAP_DEFAULT = 1e3
SELF_CHECK_SAMPLES = 1000


class Method(str, enum.Enum):
    LOCAL = "Local"
    GLOBAL = "Global"
    ITERATIVE = "Iterative"


@dataclass(frozen=True)
class ObserverDesign:
    L: np.ndarray
    P: np.ndarray
    region: object
    margins: tuple  # (alpha1, alpha2, alpha3)
    gamma: float
    method: Method
    convergence_radius: float
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method.value,
            "L": self.L.tolist(),
            "P": self.P.tolist(),
            "region": region_to_dict(self.region),
            "margins": [float(m) for m in self.margins],
            "gamma": float(self.gamma),
            "convergence_radius": _num_out(self.convergence_radius),
            "info": {k: _num_out(v) for k, v in self.info.items() if isinstance(v, (int, float, str, bool))},
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            np.array(doc["L"], dtype=float),
            np.array(doc["P"], dtype=float),
            region_from_dict(doc["region"]),
            tuple(float(m) for m in doc["margins"]),
            float(doc["gamma"]),
            Method(doc["method"]),
            float(doc["convergence_radius"]),
            dict(doc.get("info", {})),
        )


def _num_out(v):
    if isinstance(v, float) and not np.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def region_to_dict(Y):
    if isinstance(Y, Ball2):
        return {"type": "ball", "center": Y.center.tolist(), "r": float(Y.r)}
    if isinstance(Y, Ball1):
        return {"type": "l1", "center": Y.center.tolist(), "r": float(Y.r)}
    out = {"type": "poly"}
    if Y.verts is not None:
        out["vertices"] = Y.verts.tolist()
    if Y.F is not None:
        out["F"], out["g"] = Y.F.tolist(), Y.g.tolist()
    return out


def region_from_dict(doc):
    kind = doc["type"]
    if kind == "ball":
        return Ball2(np.array(doc["center"], dtype=float), float(doc["r"]))
    if kind == "l1":
        return Ball1(np.array(doc["center"], dtype=float), float(doc["r"]))
    if kind == "poly":
        return Polytope(doc.get("vertices"), doc.get("F"), doc.get("g"))
    raise ValueError(f"unknown region type {kind!r}")


def region_center(Y):
    return np.asarray(Y.center, dtype=float)


# --- small helpers -------------------------------------------------------


def convergence_radius(alpha1, alpha2, alpha3, gamma) -> float:
    """Radius of initial errors guaranteed to converge for a local design."""
    for name, v in (("alpha1", alpha1), ("alpha2", alpha2), ("alpha3", alpha3)):
        if not v > 0:
            raise NonPositiveArgument(f"{name} must be positive, got {v}")
    if gamma < 0:
        raise NonPositiveArgument(f"gamma must be nonnegative, got {gamma}")
    if gamma == 0:
        return float("inf")
    return float(alpha3 / (2 * gamma * alpha2) * np.sqrt(alpha1 / alpha2))


def gain_from(P, R):
    """L = P^{-1} R by a positive definite solve."""
    cond = np.linalg.cond(P)
    if cond > 1e10:
        log.warning("P is badly conditioned (cond = %.3g); L may be inaccurate", cond)
    else:
        log.debug("cond(P) = %.3g", cond)
    return sla.solve(P, R, assume_a="pos")


def pbh_undetectable(A, C, tol=1e-9):
    """Eigenvalues of A with nonnegative real part that C cannot see."""
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if lam.real < -tol:
            continue
        M = np.vstack([A - lam * np.eye(n), C.astype(complex)])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            bad.append(complex(lam))
    return bad


def pbh_scan(sys, Y, m=200, seed=0):
    """First point of Y (center, axis points, then samples) where (A_y, C) is not detectable."""
    c = region_center(Y)
    pts = [c]
    r = getattr(Y, "r", None)
    if r is not None:
        E = np.eye(sys.n) * r
        pts += list(c + E) + list(c - E)
    pts += list(sample_region(Y, m, np.random.default_rng(seed)))
    for y in pts:
        bad = pbh_undetectable(perturbed_A(sys, y), sys.C)
        if bad:
            return np.asarray(y), bad
    return None, []


def _lyap_terms(sys, P, Y, RC=None, L=None):
    """F0 at the region center and the F_i of -(P A_y + A_y' P + ...)."""
    c = region_center(Y)
    Ac = perturbed_A(sys, c)
    J = coupling_basis(sys)
    if L is not None:
        Ac = Ac + L @ sys.C
    G = P @ Ac
    F0 = -(G + G.T)
    if RC is not None:
        F0 = F0 - (RC + RC.T)
    Fs = []
    for Ji in J:
        H = P @ Ji
        Fs.append(-(H + H.T))
    return F0, Fs


def _worst_lyap(sys, P, L, Y, m=SELF_CHECK_SAMPLES, seed=0):
    """Largest eigenvalue of sym(P(A_y+LC)) * 2 over the center and samples of Y."""
    rng = np.random.default_rng(seed)
    ys = np.vstack([region_center(Y), sample_region(Y, m, rng)])
    J = coupling_basis(sys)
    base = sys.A + L @ sys.C
    M = base[None] + np.einsum("si,ijk->sjk", ys, J)
    G = P[None] @ M
    G = G + np.transpose(G, (0, 2, 1))
    return float(np.linalg.eigvalsh(G)[:, -1].max())


def _self_check(sys, P, L, Y, alpha3, what):
    worst = _worst_lyap(sys, P, L, Y)
    scale = max(1.0, np.abs(P).max() * np.abs(sys.A).max())
    if worst > -alpha3 + 10 * feas_tol() * scale:
        raise NumericalTrouble(f"{what}: sampled Lyapunov inequality fails (max eig {worst:.3e}, target {-alpha3:.3e})")
    return worst


# --- synthesis -----------------------------------------------------------


def local_synth(sys: QuadSystem, Y, alpha1=ALPHA1_DEFAULT, alpha2=ALPHA2_DEFAULT, solver=None) -> ObserverDesign:
    """Maximize alpha3 so that P A_y + A_y' P + RC + C'R' <= -alpha3 I on Y."""
    if not (alpha1 > 0 and alpha2 > 0):
        raise NonPositiveArgument("alpha1 and alpha2 must be positive")
    n, p = sys.n, sys.p
    eps = strict_margin(sys.A)
    sp = SdpProblem("local_synth")
    P = sp.symmetric("P", n)
    R = sp.matrix("R", n, p)
    a3 = sp.scalar("alpha3")
    RC = R @ sys.C
    sp.add_psd(P - alpha1 * np.eye(n), name="P>a1", margin=eps)
    sp.add_psd(alpha2 * np.eye(n) - P, name="P<=a2")
    sp.add_psd(cp.bmat([[alpha2 * np.eye(n), RC], [RC.T, alpha2 * np.eye(n)]]), name="RC bound")
    F0, Fs = _lyap_terms(sys, P, Y, RC=RC)
    add_robust_psd(sp, F0 - a3 * np.eye(n), Fs, Y, name="decay")
    sp.maximize(a3)
    d = region_center(Y)
    bad = pbh_undetectable(perturbed_A(sys, d), sys.C)
    rep = solve(sp, solver=solver, check=False)
    if rep.status is Status.INFEASIBLE or (rep.ok and rep["alpha3"] <= 0):
        y_bad, modes = pbh_scan(sys, Y)
        msg = "no gain makes A_y + LC uniformly stable on the region"
        if bad:
            msg += f"; (A_d, C) is not detectable at modes {bad}"
        elif y_bad is not None:
            msg += f"; (A_y, C) is not detectable at y = {np.round(y_bad, 4).tolist()}, modes {modes}"
        diag = {"pbh_undetectable": bad, "alpha3": None if not rep.ok else rep["alpha3"]}
        diag["pbh_region"] = None if y_bad is None else {"y": y_bad.tolist(), "modes": modes}
        raise Infeasible(msg, diagnostics=diag)
    if not rep.ok:
        raise NumericalTrouble(f"local_synth: {rep.message}")
    Pv, Rv, a3v = rep["P"], rep["R"], rep["alpha3"]
    L = gain_from(Pv, Rv)
    _self_check(sys, Pv, L, Y, a3v, "local_synth")
    gamma = n_norm(sys)
    rho = convergence_radius(alpha1, alpha2, a3v, gamma)
    info = {"pbh_ok": not bad, "residual": rep.residual}
    return ObserverDesign(L, Pv, Y, (alpha1, alpha2, a3v), gamma, Method.LOCAL, rho, info)


def local_synth_at_center(sys: QuadSystem, d, r, solver=None) -> ObserverDesign:
    """Sufficient local design from A_d alone, with P < (4 gamma r)^{-1} I."""
    n, p = sys.n, sys.p
    d = np.asarray(d, dtype=float)
    Y = Ball2(d, float(r))
    gamma = n_norm(sys)
    Ad = perturbed_A(sys, d)
    if gamma == 0:
        Pt = np.eye(n)
        if np.linalg.eigvalsh(Ad + Ad.T).max() <= -1.0:
            L = np.zeros((n, p))
            return ObserverDesign(L, Pt, Y, (1.0, 1.0, 1.0), 0.0, Method.LOCAL, float("inf"), {"trivial": True})
    eps = strict_margin(sys.A)
    sp = SdpProblem("local_at_center")
    P = sp.symmetric("P", n)
    R = sp.matrix("R", n, p)
    # alpha normalized to 1; the problem is homogeneous in (P, R, alpha)
    sp.add_psd(P, name="P>0", margin=eps)
    if gamma > 0 and r > 0:
        sp.add_psd(np.eye(n) / (4 * gamma * r) - P, name="P<cap", margin=eps / (4 * gamma * r))
    G = P @ Ad + R @ sys.C
    sp.add_nsd(G + G.T + np.eye(n), name="decay")
    sp.minimize(cp.trace(P))
    rep = solve(sp, solver=solver, check=False)
    if not rep.ok:
        bad = pbh_undetectable(Ad, sys.C)
        raise Infeasible(f"local_synth_at_center: {rep.status.value} ({rep.message})", {"pbh_undetectable": bad})
    Pv, L = rep["P"], gain_from(rep["P"], rep["R"])
    ev = np.linalg.eigvalsh(Pv)
    rho = convergence_radius(ev[0], ev[-1], 1.0, gamma)
    return ObserverDesign(L, Pv, Y, (float(ev[0]), float(ev[-1]), 1.0), gamma, Method.LOCAL, rho, {})


def global_synth(sys: QuadSystem, Y, state_cert: TrappingCert | None = None, pcap=PCAP_DEFAULT, solver=None) -> ObserverDesign:
    """Design with P restricted to the subspace on which the nonlinearity is invisible."""
    n, p = sys.n, sys.p
    if state_cert is not None and not _contains_or_degenerate(Y, state_cert.ball):
        raise ValueError("the state ball must lie inside the region")
    basis = sn_basis(sys)
    cap = 1.0 if pcap is None else float(pcap)
    eps = strict_margin(sys.A)
    sp = SdpProblem("global_synth")
    c = sp.vector("c", basis.dim)
    R = sp.matrix("R", n, p)
    m = sp.scalar("m")
    P = sum(c[j] * basis.basis[j] for j in range(basis.dim))
    sp.add_psd(P, name="P>=eps", margin=eps)
    sp.add_psd(cap * np.eye(n) - P, name="P<=cap")
    RC = R @ sys.C
    F0, Fs = _lyap_terms(sys, P, Y, RC=RC)
    add_robust_psd(sp, F0 - m * np.eye(n), Fs, Y, name="decay")
    sp.add_psd(m, name="m>=eps", margin=eps)
    sp.maximize(m)
    rep = solve(sp, solver=solver, check=False)
    if rep.status is Status.INFEASIBLE:
        raise Infeasible("no P in the invariant subspace certifies the region", {"sn_dim": basis.dim})
    if not rep.ok:
        raise NumericalTrouble(f"global_synth: {rep.message}")
    Pv = basis.combine(rep["c"])
    Pv = (Pv + Pv.T) / 2
    L = gain_from(Pv, rep["R"])
    mv = rep["m"]
    _self_check(sys, Pv, L, Y, mv, "global_synth")
    ev = np.linalg.eigvalsh(Pv)
    info = {"sn_dim": basis.dim, "margin": mv}
    return ObserverDesign(L, Pv, Y, (float(ev[0]), float(ev[-1]), mv), n_norm(sys), Method.GLOBAL, float("inf"), info)


def _contains_or_degenerate(Y, ball):
    if ball.r == 0:
        return True
    try:
        return region_contains(Y, ball)
    except Exception:
        return True


def verify_design(sys: QuadSystem, L, P, Y, solver=None) -> float:
    """Largest m >= 0 with P(A_y+LC) + (.)'P <= -m I certified on all of Y."""
    n = sys.n
    L = np.asarray(L, dtype=float).reshape(n, -1)
    P = np.asarray(P, dtype=float)
    P = (P + P.T) / 2
    sp = SdpProblem("verify")
    m = sp.scalar("m")
    F0, Fs = _lyap_terms(sys, P, Y, L=L)
    add_robust_psd(sp, F0 - m * np.eye(n), Fs, Y, name="decay")
    sp.maximize(m)
    rep = solve(sp, solver=solver, check=False)
    if not rep.ok:
        return 0.0
    return max(float(rep["m"]), 0.0)


def sampled_margin(sys: QuadSystem, L, P, Y, m=10_000, seed=0) -> float:
    """min over sampled y of -lambda_max(P(A_y+LC) + (.)'P); an upper bound on the certified margin."""
    L = np.asarray(L, dtype=float).reshape(sys.n, -1)
    return -_worst_lyap(sys, np.asarray(P, dtype=float), L, Y, m=m, seed=seed)


def lipschitz_margin(sys: QuadSystem, solver=None) -> float:
    """Largest Lipschitz constant a quadratic Lyapunov observer design can tolerate.

    Minimizes mu = 1/gamma^2 subject to
    [[PA + A'P + RC + C'R' + I, P], [P, -mu I]] < 0 and P > 0.
    """
    n, p = sys.n, sys.p
    eps = strict_margin(sys.A)
    sp = SdpProblem("lipschitz")
    P = sp.symmetric("P", n)
    R = sp.matrix("R", n, p)
    mu = sp.scalar("mu")
    G = P @ sys.A + R @ sys.C
    blk = cp.bmat([[G + G.T + np.eye(n), P], [P, -mu * np.eye(n)]])
    sp.add_nsd(blk, name="riccati", margin=eps)
    sp.add_psd(P, name="P>0", margin=eps)
    sp.minimize(mu)
    rep = solve(sp, solver=solver, check=False)
    if not rep.ok or rep["mu"] <= 0:
        raise Infeasible(f"no stabilizing pair for the Lipschitz condition ({rep.status.value})")
    return float(1.0 / np.sqrt(rep["mu"]))


# --- Algorithms 1 and 2 ----------------------------------------------------


class Alg1Result(NamedTuple):
    design: ObserverDesign
    state_cert: TrappingCert
    obs_cert: TrappingCert
    inclusion: bool
    sys: QuadSystem
    Q: np.ndarray
    Y: object


def _observer_ball(sys, L, state_ball, Q):
    try:
        return observer_trap_sdp(sys, L, state_ball, Q)
    except UnstableClosedLoop as exc:
        raise ObserverTrapInfeasible(f"observer trapping set is empty: {exc}") from exc
    except Infeasible as exc:
        raise ObserverTrapInfeasible(f"observer trapping SDP infeasible: {exc}", exc.diagnostics) from exc


def alg1(sys: QuadSystem, Q, Y, alpha1=ALPHA1_DEFAULT, alpha2=ALPHA2_DEFAULT, state_cert=None, strict=True) -> Alg1Result:
    """State ball, local gain, observer ball, then the inclusion test.

    With ``strict=False`` an empty observer trapping set is not an error:
    ``obs_cert`` is None and the inclusion test is reported as failed.
    """
    if state_cert is None:
        state_cert = state_trap_sdp(sys, Q)
    design = local_synth(sys, Y, alpha1, alpha2)
    obs, inc = _observer_step(sys, design.L, state_cert.ball, Q, Y, strict)
    return Alg1Result(design, state_cert, obs, inc, sys, np.asarray(Q, dtype=float), Y)


def _observer_step(sys, L, state_ball, Q, Y, strict):
    try:
        obs = _observer_ball(sys, L, state_ball, Q)
    except ObserverTrapInfeasible:
        if strict:
            raise
        log.info("no observer trapping ball for the current gain")
        return None, False
    return obs, region_contains(Y, half_minkowski(state_ball, obs.ball))


@dataclass(frozen=True)
class Alg2State:
    k: int
    P: np.ndarray
    L: np.ndarray
    alpha: float
    beta: float
    obs_ball: Ball | None
    inclusion_satisfied: bool
    obs_cert: TrappingCert | None = None

    def gain_bound_ok(self, C, tol=1e-6):
        if self.k == 0:
            return True
        nLC = np.linalg.norm(self.L @ C, 2)
        return bool(nLC <= self.beta / self.alpha * (1 + tol) + tol)


def _step_p(sys, L, Y, pcap, solver):
    n = sys.n
    # strictness measured against the scale of P, which the cap fixes
    eps = strict_margin(sys.A) * (1.0 if pcap is None else max(1.0, pcap))
    sp = SdpProblem("alg2_step1")
    P = sp.symmetric("P", n)
    a = sp.scalar("alpha")
    sp.add_psd(P - a * np.eye(n), name="P>=aI")
    if pcap is not None:
        sp.add_psd(pcap * np.eye(n) - P, name="P<=cap")
    F0, Fs = _lyap_terms(sys, P, Y, L=L)
    add_robust_psd(sp, F0, Fs, Y, name="decay", margin=eps)
    sp.maximize(a)
    rep = solve(sp, solver=solver, check=False)
    if not rep.ok:
        raise IterationStalled(f"Step 1 SDP failed: {rep.status.value} ({rep.message})")
    return rep["P"], rep["alpha"]


def _step_l(sys, P, Y, tie_break, solver, scaled=False):
    n, p = sys.n, sys.p
    eps = strict_margin(sys.A) * max(1.0, float(np.linalg.eigvalsh(P)[-1]))

    def build():
        sp = SdpProblem("alg2_step2")
        L = sp.matrix("L", n, p)
        b = sp.scalar("beta")
        LC = L @ sys.C
        # scaled bounds ||P LC|| instead, which gives ||LC|| <= beta / lambda_min(P)
        B = P @ LC if scaled else LC
        sp.add_psd(cp.bmat([[b * np.eye(n), B], [B.T, b * np.eye(n)]]), name="gain bound")
        F0, Fs = _lyap_terms(sys, P, Y, RC=P @ LC)
        add_robust_psd(sp, F0, Fs, Y, name="decay", margin=eps)
        return sp, L, b

    sp, L, b = build()
    sp.minimize(b)
    rep = solve(sp, solver=solver, check=False)
    if not rep.ok:
        raise IterationStalled(f"Step 2 SDP failed: {rep.status.value} ({rep.message})")
    Lv, bv = rep["L"], rep["beta"]
    if tie_break:
        sp, L, b = build()
        tau = sp.scalar("tau")
        lvec = cp.reshape(L, (n * p, 1), order="C")
        sp.add_psd(cp.bmat([[cp.reshape(tau, (1, 1), order="C"), lvec.T], [lvec, np.eye(n * p)]]), name="tau>=|L|^2")
        sp.add_psd(bv * (1 + 1e-6) + 1e-9 - b, name="beta<=beta*")
        sp.minimize(tau)
        rep2 = solve(sp, solver=solver, check=False)
        if rep2.ok:
            Lv = rep2["L"]
    return Lv, bv


def _warm_start_ok(sys, P, L, Y):
    # the previous pair must stay feasible for the next Step-1 program
    worst = _worst_lyap(sys, P, L, Y, m=200)
    return worst <= 10 * feas_tol() * max(1.0, np.abs(P).max() * np.abs(sys.A).max())


def alg2_iterate(
    init: Alg1Result,
    max_iter=10,
    pcap=PCAP_DEFAULT,
    tie_break=False,
    solver=None,
    stop_on_inclusion=True,
    gain_bound="literal",
):
    """Alternate P and L updates until the averaged balls fit inside the region.

    ``gain_bound="literal"`` bounds ||LC|| by beta in the L update; "scaled"
    bounds ||P LC|| instead, which makes ||L_k C|| <= beta_k / alpha_k hold
    whatever the size of alpha_k.
    """
    if gain_bound not in ("literal", "scaled"):
        raise ValueError("gain_bound must be 'literal' or 'scaled'")
    sys, Q, Y = init.sys, init.Q, init.Y
    state_ball = init.state_cert.ball
    obs0 = init.obs_cert
    seq = [Alg2State(0, init.design.P, init.design.L, 0.0, 0.0, obs0 and obs0.ball, init.inclusion, obs0)]
    if init.inclusion and stop_on_inclusion:
        return seq
    L = init.design.L
    P = init.design.P
    for k in range(1, max_iter + 1):
        if not _warm_start_ok(sys, P, L, Y):
            log.warning("iteration %d: previous (P, L) fails the sampled Step-1 check", k)
        P, alpha = _step_p(sys, L, Y, pcap, solver)
        L, beta = _step_l(sys, P, Y, tie_break, solver, scaled=gain_bound == "scaled")
        obs, inc = _observer_step(sys, L, state_ball, Q, Y, strict=False)
        st = Alg2State(k, P, L, float(alpha), float(beta), obs and obs.ball, inc, obs)
        if not st.gain_bound_ok(sys.C):
            log.warning("iteration %d: ||LC|| exceeds beta/alpha", k)
        seq.append(st)
        if inc and stop_on_inclusion:
            break
    return seq


def design_from_state(sys: QuadSystem, st: Alg2State, Y) -> ObserverDesign:
    """Certify the last Algorithm-2 pair as a local design on Y."""
    m = verify_design(sys, st.L, st.P, Y)
    ev = np.linalg.eigvalsh(st.P)
    gamma = n_norm(sys)
    rho = convergence_radius(ev[0], ev[-1], m, gamma) if m > 0 and ev[0] > 0 else 0.0
    info = {"iterations": st.k, "inclusion": st.inclusion_satisfied}
    if st.obs_ball is not None:
        info["obs_radius"] = float(st.obs_ball.r)
    return ObserverDesign(st.L, st.P, Y, (float(ev[0]), float(ev[-1]), m), gamma, Method.ITERATIVE, rho, info)
