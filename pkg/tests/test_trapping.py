import numpy as np
import pytest

from obsv import fixtures
from obsv.errors import Infeasible, NotDissipative, UnstableClosedLoop
from obsv.lmi import Ball1, Ball2, Polytope
from obsv.model import build_fluid, fluid_to_system
from obsv.sim import check_invariance, integrate
from obsv.trapping import (
    Ball,
    Kind,
    TrappingCert,
    _max_norm_on_ellipsoid,
    check_cert,
    ellipsoid_of,
    fluid_trap,
    half_minkowski,
    observer_trap_sdp,
    region_contains,
    state_trap_sdp,
    trap_radius,
)

L5 = np.array([[-10.0], [-13.3], [0.0]])


def test_trap_radius_lorenz(lorenz):
    assert trap_radius(lorenz, [0, 0, 37.5], 0.9930) == pytest.approx(100.70, rel=1e-3)


def test_trap_radius_toy():
    assert trap_radius(fixtures.toy_stable(3), np.zeros(3), 1.0) == 0.0


def test_trap_radius_lorenz_origin_not_dissipative(lorenz):
    with pytest.raises(NotDissipative):
        trap_radius(lorenz, np.zeros(3), 0.5)


@pytest.fixture(scope="module")
def lorenz_cert(lorenz, lorenz_Q):
    return state_trap_sdp(lorenz, lorenz_Q)


def test_state_trap_lorenz(lorenz, lorenz_cert):
    assert lorenz_cert.kind is Kind.STATE
    assert lorenz_cert.ball.r == pytest.approx(100.7, rel=1e-2)
    assert np.linalg.norm(lorenz_cert.ball.center - [0, 0, 37.5]) <= 0.5
    assert check_cert(lorenz, lorenz_cert)


def test_state_trap_is_invariant_in_simulation(lorenz, lorenz_cert, rng):
    b = lorenz_cert.ball
    u = rng.standard_normal((20, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    tr = integrate(lorenz, b.center + b.r * u, 5.0, dt=1e-3, record_every=10)
    assert check_invariance(tr, b, 1e-3)


def test_cert_round_trip(lorenz_cert):
    back = TrappingCert.from_dict(lorenz_cert.to_dict())
    assert back.ball.r == lorenz_cert.ball.r
    assert np.array_equal(back.ball.center, lorenz_cert.ball.center)
    assert back.kind is lorenz_cert.kind


def test_degenerate_branch():
    cert = state_trap_sdp(fixtures.toy_stable(3), np.zeros((3, 3)))
    assert cert.kind is Kind.DEGENERATE
    assert cert.ball.r <= 1e-6 and np.linalg.norm(cert.ball.center) <= 1e-6


def test_mfe_trap_at_lower_reynolds_number():
    # a radius of 0.9477 corresponds to Re = 50 rather than the default 60
    from obsv.model import basis_vectors, kernel_Q

    sys = fluid_to_system(fixtures.mfe9_model(Re=50.0))
    cert = state_trap_sdp(sys, kernel_Q(sys, basis_vectors(9, [0])).Q)
    assert cert.ball.r == pytest.approx(0.9477, rel=1e-3)


def test_observer_trap_lorenz(lorenz, lorenz_Q, lorenz_cert):
    obs = observer_trap_sdp(lorenz, L5, lorenz_cert.ball, lorenz_Q)
    assert obs.kind is Kind.OBSERVER
    assert np.linalg.norm(obs.ball.center - [0, 0, 9.2]) <= 0.5
    assert obs.ball.r > lorenz_cert.ball.r
    assert check_cert(lorenz, obs, L=L5, state_ball=lorenz_cert.ball)


def test_observer_trap_zero_gain_delegates():
    sys = fixtures.toy_stable(2)
    cert = observer_trap_sdp(sys, np.zeros((2, 2)), Ball(np.zeros(2), 1.0), np.zeros((2, 2)))
    assert cert.kind is Kind.DEGENERATE


def test_observer_trap_unstable(lorenz, lorenz_Q, lorenz_cert):
    with pytest.raises(UnstableClosedLoop):
        observer_trap_sdp(lorenz, np.zeros((3, 1)), lorenz_cert.ball, lorenz_Q)


def test_fluid_trap_mfe(mfe_model):
    cert = fluid_trap(mfe_model)
    assert cert.kind is Kind.FLUID
    assert cert.ball.r == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(cert.ball.center, -np.eye(9)[0])


def test_fluid_trap_zero_forcing():
    fm = build_fluid([1.0, 2.0], [0.0, 0.0], 1.0, np.zeros((2, 2, 2)), [[1.0, 0.0]])
    cert = fluid_trap(fm)
    assert cert.kind is Kind.DEGENERATE and cert.ball.r == 0.0


def test_fluid_trap_toy_against_grid():
    fm = build_fluid([1.0, 2.0], [1.0, 0.0], 1.0, np.zeros((2, 2, 2)), [[1.0, 0.0]])
    cert = fluid_trap(fm)
    # ellipsoid {w : w' Lambda (w + c) >= 0} in shifted coordinates x = w - c
    th = np.linspace(0, 2 * np.pi, 200001)
    lam = np.array([1.0, 2.0])
    c = np.array([1.0, 0.0])
    # boundary of sum lam_i (x_i + c_i/2)^2 = sum lam_i c_i^2 / 4
    rho = np.sqrt(lam @ c**2 / 4)
    pts = np.stack([rho / np.sqrt(lam[0]) * np.cos(th), rho / np.sqrt(lam[1]) * np.sin(th)], axis=1) - c / 2
    grid = np.max(np.linalg.norm(pts + c, axis=1))
    assert cert.ball.r == pytest.approx(grid, abs=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_max_norm_on_ellipsoid_matches_sampling(seed):
    rng = np.random.default_rng(seed)
    n = 3
    lam = rng.uniform(0.2, 3.0, n)
    if seed % 2:
        lam[1] = lam[0]  # repeated eigenvalue exercises the hard case
    m = rng.standard_normal(n) * (0.0 if seed == 4 else 1.0)
    rho2 = 1.5
    u = rng.standard_normal((200000, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = u * np.sqrt(rho2 / lam)
    sampled = np.max(np.linalg.norm(pts + m, axis=1))
    got, w = _max_norm_on_ellipsoid(lam, m, rho2)
    assert lam @ (w - m) ** 2 <= rho2 * (1 + 1e-8)
    assert got >= sampled - 1e-9
    assert got == pytest.approx(sampled, rel=5e-3)


def test_half_minkowski():
    b = half_minkowski(Ball(np.array([0, 0, 37.5]), 100.7), Ball(np.array([0, 0, 9.2]), 1282.6))
    assert b.r == pytest.approx(691.65)
    assert np.allclose(b.center, [0, 0, 23.35])
    same = Ball(np.ones(2), 3.0)
    twice = half_minkowski(same, same)
    assert twice.r == 3.0 and np.allclose(twice.center, same.center)
    pt = half_minkowski(Ball(np.zeros(2), 2.0), Ball(np.array([2.0, 0.0]), 0.0))
    assert pt.r == 1.0 and np.allclose(pt.center, [1.0, 0.0])


def test_region_contains():
    Y = Ball2(np.array([0, 0, 37.5]), 1200.0)
    assert region_contains(Y, Ball(np.array([0, 0, 23.35]), 691.65))
    assert not region_contains(Y, Ball(np.array([0, 0, 23.35]), 1190.0))
    b = Ball(np.ones(3), 2.0)
    assert region_contains(Ball2(b.center, b.r), b)
    assert region_contains(Ball1(np.zeros(2), np.sqrt(2.0)), Ball(np.zeros(2), 1.0))
    assert not region_contains(Ball1(np.zeros(2), np.sqrt(2.0) - 1e-6), Ball(np.zeros(2), 1.0))
    box = Polytope(F=np.vstack([np.eye(2), -np.eye(2)]), g=np.ones(4))
    assert region_contains(box, Ball(np.zeros(2), 1.0))
    assert not region_contains(box, Ball(np.array([0.5, 0.0]), 1.0))


def test_ellipsoid_of_mfe(mfe_model):
    E = ellipsoid_of(mfe_model)
    assert E is not None
