"""Shared oracles for the test suite."""
import numpy as np

from obsv.lmi import Ball2, SdpProblem, add_robust_psd, sample_region, solve, sym


def random_sym(rng, m, scale=1.0):
    G = rng.standard_normal((m, m)) * scale
    return (G + G.T) / 2


def robust_instance(rng, region, method=None):
    """Maximize a random linear objective over x with F(x, y) >= 0 on the region.

    F(x, y) = G0 + x1 H1 + x2 H2 + sum_i (y - c)_i Fi with |x| <= 1.
    Returns the accepted x (or None if infeasible) and the data to re-check it.
    """
    m = int(rng.integers(2, 4))
    n = region.n
    G0 = random_sym(rng, m) + 3.0 * np.eye(m)
    H = [random_sym(rng, m) for _ in range(2)]
    Fs = [random_sym(rng, m, 0.5) for _ in range(n)]
    sp = SdpProblem("robust")
    x = sp.vector("x", 2)
    F0 = G0 + x[0] * H[0] + x[1] * H[1]
    add_robust_psd(sp, F0, Fs, region, name="r", method=method)
    sp.add_psd(1 - x[0])
    sp.add_psd(1 + x[0])
    sp.add_psd(1 - x[1])
    sp.add_psd(1 + x[1])
    w = rng.standard_normal(2)
    sp.maximize(w @ x)
    rep = solve(sp, check=False)
    if not rep.ok:
        return None, None
    xv = rep["x"]

    def pointwise_min_eig(ys):
        base = G0 + xv[0] * H[0] + xv[1] * H[1]
        out = []
        for y in ys:
            M = base + sum(di * Fi for di, Fi in zip(y - region.center, Fs))
            out.append(np.linalg.eigvalsh(sym(M))[0])
        return np.array(out)

    return xv, pointwise_min_eig


def min_eig_on_samples(region, check, rng, samples):
    ys = sample_region(region, samples, rng)
    if isinstance(region, Ball2):
        # include boundary points, where the constraint binds
        u = rng.standard_normal((samples // 10, region.n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        ys = np.vstack([ys, region.center + region.r * u])
    return float(check(ys).min())


# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE = {}


def record(number, title, checks):
    """Store and print one PASS/FAIL line; ``checks`` maps labels to (ok, detail)."""
    ok = all(c[0] for c in checks.values())
    detail = "; ".join(f"{k}: {'ok' if v[0] else 'FAIL'} ({v[1]})" for k, v in checks.items())
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
    ACCEPTANCE[number] = line
    print(line)
    return ok
