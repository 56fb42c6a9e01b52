"""Fixed-step RK4 simulation of the plant and the observer, plus CSV export."""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonFinite
from .model import QuadSystem
from .serialize import atomic_write_text

BLOWUP = 1e12
DT_DEFAULT = 1e-3


@dataclass(frozen=True)
class Trace:
    """Time grid and states; ``X`` is (T, n) or (T, m, n) for a batch of runs."""

    t: np.ndarray
    X: np.ndarray
    Xhat: np.ndarray | None = None
    err2: np.ndarray | None = None

    @property
    def n(self):
        return self.X.shape[-1]


def _grid(t_end, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_end >= dt:
        raise ValueError("t_end must be at least dt")
    steps = int(np.ceil(t_end / dt - 1e-9))
    t = np.arange(steps + 1) * dt
    t[-1] = t_end
    return t


def _flat_quadratic(N):
    """Matrix M with N(x)x = kron(x, x) @ M."""
    n = N.shape[0]
    return np.transpose(N, (0, 2, 1)).reshape(n * n, n)


def _make_rhs(sys, L=None):
    """Right-hand side; with a gain, z = (x, xh) and both halves share one code path."""
    A_T, n = sys.A.T, sys.n
    M = _flat_quadratic(sys.N)

    def f(x):
        outer = (x[..., :, None] * x[..., None, :]).reshape(x.shape[:-1] + (n * n,))
        return x @ A_T + outer @ M

    if L is None:
        return f
    LC_T = (np.asarray(L, dtype=float).reshape(n, -1) @ sys.C).T

    def joint(z):
        pair = z.reshape(z.shape[:-1] + (2, n))
        d = f(pair)
        # xh' = f(xh) - L(Cx - Cxh): exactly zero correction when xh == x
        d[..., 1, :] -= (pair[..., 0, :] - pair[..., 1, :]) @ LC_T
        return d.reshape(z.shape)

    return joint


def _rk4(f, z0, t, record_every):
    z = np.array(z0, dtype=float)
    keep = list(range(0, len(t), record_every))
    if keep[-1] != len(t) - 1:
        keep.append(len(t) - 1)
    out = np.empty((len(keep),) + z.shape)
    out[0] = z
    slot = 1
    steps = np.diff(t).tolist()
    for k, h in enumerate(steps):
        k1 = f(z)
        k2 = f(z + (0.5 * h) * k1)
        k3 = f(z + (0.5 * h) * k2)
        k4 = f(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        # written so that NaN also trips the guard
        if not np.abs(z).max() <= BLOWUP:
            raise NonFinite(k + 1, t[k + 1])
        if slot < len(keep) and keep[slot] == k + 1:
            out[slot] = z
            slot += 1
    return t[keep], out


def _check_x0(sys, x0, name):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != sys.n:
        raise DimensionMismatch(f"{name} must have trailing dimension {sys.n}")
    return x0


def integrate(sys: QuadSystem, x0, t_end, dt=DT_DEFAULT, record_every=1) -> Trace:
    """Classical RK4 on x' = Ax + N(x)x; ``x0`` may hold a batch of starts."""
    x0 = _check_x0(sys, x0, "x0")
    t, X = _rk4(_make_rhs(sys), x0, _grid(t_end, dt), record_every)
    return Trace(t, X)


def integrate_observer(sys: QuadSystem, L, x0, xhat0, t_end, dt=DT_DEFAULT, record_every=1) -> Trace:
    """Plant and observer x^' = A x^ + N(x^) x^ - L(Cx - Cx^) side by side."""
    x0 = _check_x0(sys, x0, "x0")
    xhat0 = _check_x0(sys, xhat0, "xhat0")
    x0, xhat0 = np.broadcast_arrays(x0, xhat0)
    z0 = np.concatenate([x0, xhat0], axis=-1)
    t, Z = _rk4(_make_rhs(sys, L), z0, _grid(t_end, dt), record_every)
    n = sys.n
    X, Xh = Z[..., :n], Z[..., n:]
    return Trace(t, X, Xh, np.linalg.norm(X - Xh, axis=-1))


def check_invariance(trace: Trace, ball, tol) -> bool:
    """True iff no run leaves the inflated ball after first being inside it."""
    d = np.asarray(ball.center, dtype=float)
    dist = np.linalg.norm(trace.X - d, axis=-1)  # (T,) or (T, m)
    if dist.ndim == 1:
        dist = dist[:, None]
    inside = dist <= ball.r
    entered = np.logical_or.accumulate(inside, axis=0)
    return bool(np.all(~entered | (dist <= ball.r * (1 + tol))))


# --- CSV ---------------------------------------------------------------------


def _header(n, observer):
    cols = ["t"] + [f"x{i + 1}" for i in range(n)]
    if observer:
        cols += [f"xh{i + 1}" for i in range(n)] + ["err2"]
    return cols


def export_csv(trace: Trace, path, plot_script=False):
    """Write one row per grid point with 17 significant digits."""
    if trace.X.ndim != 2:
        raise ValueError("only single-run traces can be exported")
    n = trace.n
    observer = trace.Xhat is not None
    cols = [trace.t[:, None], trace.X]
    if observer:
        cols += [trace.Xhat, trace.err2[:, None]]
    data = np.hstack(cols)
    buf = io.StringIO()
    buf.write(",".join(_header(n, observer)) + "\n")
    np.savetxt(buf, data, delimiter=",", fmt="%.17g")
    path = Path(path)
    atomic_write_text(path, buf.getvalue())
    if plot_script:
        atomic_write_text(path.with_suffix(".gp"), gnuplot_script(path.name, n, observer))
    return path


def import_csv(path) -> Trace:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    observer = header[-1] == "err2"
    n = (len(header) - 2) // 2 if observer else len(header) - 1
    t = data[:, 0]
    X = data[:, 1 : n + 1]
    if observer:
        return Trace(t, X, data[:, n + 1 : 2 * n + 1], data[:, -1])
    return Trace(t, X)


def gnuplot_script(csv_name, n, observer):
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 't'",
    ]
    if observer:
        col = 2 * n + 2
        lines += [
            "set logscale y",
            "set ylabel '||x - xhat||'",
            f"plot '{csv_name}' using 1:{col} with lines",
        ]
    else:
        plots = ", ".join(f"'{csv_name}' using 1:{i + 2} with lines" for i in range(n))
        lines += [f"plot {plots}"]
    return "\n".join(lines) + "\n"
