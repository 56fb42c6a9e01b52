"""Shipped example systems: the Lorenz attractor and the nine-mode shear-flow model."""
from importlib import resources

import numpy as np

from .model import FluidModel, QuadSystem, build_fluid, build_system, loads_model

FIXTURES = ("lorenz", "mfe9")


def lorenz(C=(0.0, 1.0, 0.0)) -> QuadSystem:
    A = [[-10.0, 10.0, 0.0], [28.0, -1.0, 0.0], [0.0, 0.0, -8.0 / 3.0]]
    N = np.zeros((3, 3, 3))
    N[0][1, 2] = -1.0
    N[0][2, 1] = 1.0
    return build_system(A, N, C)


def mfe_coefficients(alpha=0.5, beta=np.pi / 2, gamma=1.0):
    """Decay constants and quadratic coefficients of the nine-mode shear-flow model.

    Returns ``(lam, N)`` with the model written as
    ``a_dot = f + (-lam * a) / Re + N(a) a`` where ``f = lam[0] e_1 / Re``.
    Coefficients follow Moehlis, Faisst & Eckhardt (New J. Phys. 6, 56, 2004).
    """
    a, b, g = alpha, beta, gamma
    kag = np.sqrt(a * a + g * g)
    kbg = np.sqrt(b * b + g * g)
    kabg = np.sqrt(a * a + b * b + g * g)
    s6 = np.sqrt(6.0)
    s32 = np.sqrt(1.5)

    lam = np.array([
        b * b,
        4 * b * b / 3 + g * g,
        b * b + g * g,
        (3 * a * a + 4 * b * b) / 3,
        a * a + b * b,
        (3 * a * a + 4 * b * b + 3 * g * g) / 3,
        a * a + b * b + g * g,
        a * a + b * b + g * g,
        9 * b * b,
    ])

    # (equation, first mode, second mode, coefficient), 1-based mode numbers
    terms = [
        (1, 6, 8, -s32 * b * g / kabg),
        (1, 2, 3, s32 * b * g / kbg),
        (2, 4, 6, 10 / (3 * s6) * g * g / kag),
        (2, 5, 7, -g * g / (s6 * kag)),
        (2, 5, 8, -a * b * g / (s6 * kag * kabg)),
        (2, 1, 3, -s32 * b * g / kbg),
        (2, 3, 9, -s32 * b * g / kbg),
        (3, 4, 7, 2 * a * b * g / (s6 * kag * kbg)),
        (3, 5, 6, 2 * a * b * g / (s6 * kag * kbg)),
        (3, 4, 8, (b * b * (3 * a * a + g * g) - 3 * g * g * (a * a + g * g)) / (s6 * kag * kbg * kabg)),
        (4, 1, 5, -a / s6),
        (4, 2, 6, -10 / (3 * s6) * a * a / kag),
        (4, 3, 7, -s32 * a * b * g / (kag * kbg)),
        (4, 3, 8, -s32 * a * a * b * b / (kag * kbg * kabg)),
        (4, 5, 9, -a / s6),
        (5, 1, 4, a / s6),
        (5, 2, 7, a * a / (s6 * kag)),
        (5, 2, 8, -a * b * g / (s6 * kag * kabg)),
        (5, 4, 9, a / s6),
        (5, 3, 6, 2 * a * b * g / (s6 * kag * kbg)),
        (6, 1, 7, a / s6),
        (6, 1, 8, s32 * b * g / kabg),
        (6, 2, 4, 10 / (3 * s6) * (a * a - g * g) / kag),
        (6, 3, 5, -2 * np.sqrt(2.0 / 3.0) * a * b * g / (kag * kbg)),
        (6, 7, 9, a / s6),
        (6, 8, 9, s32 * b * g / kabg),
        (7, 1, 6, -a / s6),
        (7, 6, 9, -a / s6),
        (7, 2, 5, (g * g - a * a) / (s6 * kag)),
        (7, 3, 4, a * b * g / (s6 * kag * kbg)),
        (8, 2, 5, 2 * a * b * g / (s6 * kag * kabg)),
        (8, 3, 4, g * g * (3 * a * a - b * b + 3 * g * g) / (s6 * kag * kbg * kabg)),
        (9, 2, 3, s32 * b * g / kbg),
        (9, 6, 8, -s32 * b * g / kabg),
    ]
    N = np.zeros((9, 9, 9))
    for eq, j, k, coef in terms:
        # a_j a_k in equation eq  ->  N[j][eq, k]
        N[j - 1][eq - 1, k - 1] += coef
    return lam, N


def mfe9_model(Re=60.0, C=None) -> FluidModel:
    lam, N = mfe_coefficients()
    if C is None:
        C = np.hstack([np.eye(6), np.zeros((6, 3))])
    c = np.zeros(9)
    c[0] = 1.0
    return build_fluid(lam, c, Re, N, C)


def load_fixture(name):
    """Load a shipped fixture file by name."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    text = resources.files("obsv").joinpath("data", f"{name}.json").read_text()
    return loads_model(text)


def fixture_system(name) -> QuadSystem:
    from .model import fluid_to_system

    m = load_fixture(name)
    return fluid_to_system(m) if isinstance(m, FluidModel) else m


def toy_stable(n=3, C=None) -> QuadSystem:
    """A = -I with no nonlinearity."""
    if C is None:
        C = np.eye(n)
    return build_system(-np.eye(n), np.zeros((n, n, n)), C)
