"""Quadratic energy-preserving systems.

A system is ``xdot = A x + N(x) x``, ``y = C x`` where ``N(x) = sum_i x_i M[i]``
for coefficient matrices ``M[0..n-1]``. The nonlinearity must satisfy
``x' N(x) x = 0`` for every ``x``.
"""
from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, EmptySubspace, NotEnergyPreserving, ParseError

ENERGY_RTOL = 1e-10
SN_RTOL = 1e-10


def _frozen(a, ndim, name):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _arrays_equal(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class QuadSystem:
    A: np.ndarray
    N: np.ndarray  # shape (n, n, n); N[i] is the coefficient of x_i
    C: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def N_of(self, x) -> np.ndarray:
        """The matrix N(x)."""
        return np.tensordot(np.asarray(x, dtype=float), self.N, axes=(0, 0))

    def nonlinear(self, x) -> np.ndarray:
        """N(x) x, vectorized over leading batch dimensions of ``x``."""
        x = np.asarray(x, dtype=float)
        return np.einsum("ijk,...i,...k->...j", self.N, x, x)

    def rhs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.nonlinear(x)

    def __eq__(self, other):
        if not isinstance(other, QuadSystem):
            return NotImplemented
        return all(_arrays_equal(getattr(self, f), getattr(other, f)) for f in ("A", "N", "C"))

    __hash__ = None


def energy_coefficients(N) -> np.ndarray:
    """Fully symmetrized cubic coefficient tensor of x' N(x) x.

    Entry (i,j,k) is the sum over the six permutations s of (i,j,k) of
    ``N[s0][s1, s2]``; the nonlinearity is energy preserving iff all vanish.
    """
    N = np.asarray(N, dtype=float)
    # T[a, i, k] = N[i][a, k] is the coefficient of x_a x_i x_k
    T = np.transpose(N, (1, 0, 2))
    return sum(np.transpose(T, perm) for perm in itertools.permutations(range(3)))


def check_energy(N, rtol=ENERGY_RTOL):
    """Raise NotEnergyPreserving naming the worst index triple, if any."""
    S = energy_coefficients(N)
    if S.size == 0:
        return
    scale = max(1.0, float(np.max(np.abs(N))))
    worst = np.unravel_index(np.argmax(np.abs(S)), S.shape)
    if abs(S[worst]) > rtol * scale:
        raise NotEnergyPreserving(tuple(sorted(worst)), S[worst])


def build_system(A, Nmats, C, check=True) -> QuadSystem:
    """Validate dimensions and the energy-preserving identity, return a QuadSystem."""
    A = _frozen(A, 2, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    N = _frozen(Nmats, 3, "N") if len(Nmats) else None
    if N is None or N.shape != (n, n, n):
        got = None if N is None else N.shape
        raise DimensionMismatch(f"N must hold {n} matrices of size {n}x{n}, got {got}")
    C = np.array(C, dtype=float)
    if C.ndim == 1:
        C = C[None, :]
    C = _frozen(C, 2, "C")
    if C.shape[1] != n or C.shape[0] < 1:
        raise DimensionMismatch(f"C must be p x {n}, got {C.shape}")
    if check:
        check_energy(N)
    return QuadSystem(A, N, C)


def _vec(sys, x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise DimensionMismatch(f"{name} must have length {sys.n}, got shape {x.shape}")
    return x


def energy_residual(sys: QuadSystem, x) -> float:
    x = _vec(sys, x)
    return float(x @ sys.N_of(x) @ x)


class QuadFormRep(NamedTuple):
    Qsym: np.ndarray  # (n, n, n), Qsym[i] symmetric with N(d)d = (d'Qsym[i]d)_i
    Qtilde: np.ndarray  # (n, n, n), Qtilde[k][i, j] = Qsym[i][j, k]
    Theta: np.ndarray  # Gram matrix of the Qtilde under the Frobenius product


def quad_forms(sys: QuadSystem) -> QuadFormRep:
    N = sys.N
    # Qsym[i][j, k] = (N[j][i, k] + N[k][i, j]) / 2
    Qsym = 0.5 * (np.transpose(N, (1, 0, 2)) + np.transpose(N, (1, 2, 0)))
    Qtilde = np.transpose(Qsym, (2, 0, 1))
    flat = Qtilde.reshape(sys.n, -1)
    Theta = flat @ flat.T
    return QuadFormRep(Qsym, Qtilde, Theta)


def n_norm(sys: QuadSystem) -> float:
    """Operator norm of x -> N(x) with the Frobenius norm on matrices."""
    Theta = quad_forms(sys).Theta
    top = float(np.max(np.linalg.eigvalsh(Theta))) if sys.n else 0.0
    return float(np.sqrt(max(top, 0.0)))


def coupling_matrix(sys: QuadSystem, d) -> np.ndarray:
    """Matrix of x -> N(x) d + N(d) x."""
    d = _vec(sys, d, "d")
    return sys.N_of(d) + np.einsum("iak,k->ai", sys.N, d)


def perturbed_A(sys: QuadSystem, d) -> np.ndarray:
    return sys.A + coupling_matrix(sys, d)


def coupling_basis(sys: QuadSystem) -> np.ndarray:
    """J[i] = coupling_matrix(e_i), so that A_y = A + sum_i y_i J[i]."""
    return sys.N + np.transpose(sys.N, (2, 1, 0))


@dataclass(frozen=True, eq=False)
class SnBasis:
    basis: np.ndarray  # (dim, n, n), Frobenius-orthonormal symmetric matrices

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def combine(self, coeffs) -> np.ndarray:
        return np.tensordot(np.asarray(coeffs, dtype=float), self.basis, axes=(0, 0))


def _sym_basis(n):
    """Frobenius-orthonormal basis of the symmetric n x n matrices."""
    out = []
    for a in range(n):
        for b in range(a, n):
            E = np.zeros((n, n))
            if a == b:
                E[a, a] = 1.0
            else:
                E[a, b] = E[b, a] = 1.0 / np.sqrt(2.0)
            out.append(E)
    return np.array(out)


def _monomials(n):
    return list(itertools.combinations_with_replacement(range(n), 3))


def sn_cubic_coefficients(sys: QuadSystem, P) -> np.ndarray:
    """Collected monomial coefficients of e -> e' P N(e) e (one per sorted triple)."""
    P = np.asarray(P, dtype=float)
    T = np.einsum("ab,ibk->aik", P, sys.N)
    S = sum(np.transpose(T, perm) for perm in itertools.permutations(range(3)))
    coeffs = []
    for tri in _monomials(sys.n):
        # S sums all 6 orderings; divide out the repeated ones
        mult = len(set(itertools.permutations(tri)))
        coeffs.append(S[tri] * mult / 6.0)
    return np.array(coeffs)


def sn_basis(sys: QuadSystem, rtol=SN_RTOL) -> SnBasis:
    """Orthonormal basis of {P symmetric : e' P N(e) e = 0 for all e}."""
    G = _sym_basis(sys.n)
    M = np.column_stack([sn_cubic_coefficients(sys, E) for E in G])
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * smax)) if smax > 0 else 0
    null = Vt[rank:].T  # coordinates in the orthonormal symmetric basis
    basis = np.tensordot(null.T, G, axes=(1, 0))
    if basis.shape[0] == 0:
        # the identity always qualifies under energy preservation
        raise AssertionError("S_N subspace came out empty; the nonlinearity cannot be energy preserving")
    basis.setflags(write=False)
    return SnBasis(basis)


class KernelQ(NamedTuple):
    valid: bool
    Q: np.ndarray
    basis: np.ndarray


def kernel_Q(sys: QuadSystem, B=None, tol=1e-10) -> KernelQ:
    """Build Q with ker Q = span(B) and report whether N(d)d = 0 on that span.

    With ``B=None`` the span is the intersection of the kernels of the
    quadratic forms Q^(i); EmptySubspace is raised if it is trivial.
    """
    qf = quad_forms(sys)
    n = sys.n
    if B is None:
        B = sla.null_space(qf.Qsym.reshape(n * n, n), rcond=tol)
        if B.shape[1] == 0:
            raise EmptySubspace("the kernels of the quadratic forms intersect only in {0}")
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != n:
        raise DimensionMismatch(f"B must have {n} rows, got {B.shape}")
    scale = max(1.0, float(np.max(np.abs(qf.Qsym)))) * max(1.0, float(np.max(np.abs(B)))) ** 2
    valid = all(np.max(np.abs(B.T @ Qi @ B)) <= tol * scale for Qi in qf.Qsym)
    Q = np.eye(n) - B @ np.linalg.pinv(B)
    return KernelQ(bool(valid), Q, B)


def basis_vectors(n, indices) -> np.ndarray:
    """Columns e_i for zero-based ``indices``."""
    return np.eye(n)[:, list(indices)]


@dataclass(frozen=True, eq=False)
class FluidModel:
    lam: np.ndarray  # positive decay constants; Lambda = -diag(lam)
    c: np.ndarray
    Re: float
    N: np.ndarray
    C: np.ndarray

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    @property
    def Lambda(self) -> np.ndarray:
        return -np.diag(self.lam)

    def __eq__(self, other):
        if not isinstance(other, FluidModel):
            return NotImplemented
        return self.Re == other.Re and all(
            _arrays_equal(getattr(self, f), getattr(other, f)) for f in ("lam", "c", "N", "C")
        )

    __hash__ = None


def build_fluid(lam, c, Re, Nmats, C) -> FluidModel:
    lam = _frozen(lam, 1, "lambda")
    n = lam.shape[0]
    if np.any(lam <= 0):
        raise DimensionMismatch("decay constants lambda must be strictly positive")
    if not (np.isfinite(Re) and Re > 0):
        raise DimensionMismatch("Re must be positive")
    c = _frozen(c, 1, "c")
    if c.shape != (n,):
        raise DimensionMismatch(f"c must have length {n}")
    # reuse the system validator for N, C and the energy identity
    probe = build_system(np.zeros((n, n)), Nmats, C)
    return FluidModel(lam, c, float(Re), probe.N, probe.C)


def fluid_to_system(fm: FluidModel) -> QuadSystem:
    """Perturbation dynamics about the stationary point c."""
    base = QuadSystem(np.zeros((fm.n, fm.n)), fm.N, fm.C)
    A = fm.Lambda / fm.Re + coupling_matrix(base, fm.c)
    return build_system(A, fm.N, fm.C)


# --- model files ---------------------------------------------------------


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _field(doc, text, key, ndim=None, kind="array"):
    if key not in doc:
        raise ParseError("missing required field", field=key)
    val = doc[key]
    if kind == "int":
        if not isinstance(val, int) or isinstance(val, bool) or val <= 0:
            raise ParseError("expected a positive integer", field=key, line=_line_of(text, key))
        return val
    if kind == "number":
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ParseError("expected a number", field=key, line=_line_of(text, key))
        return float(val)
    try:
        arr = np.array(val, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"not a numeric array ({exc})", field=key, line=_line_of(text, key)) from None
    if arr.dtype == object or (ndim is not None and arr.ndim != ndim):
        raise ParseError(f"expected a {ndim}-dimensional numeric array", field=key, line=_line_of(text, key))
    if not np.all(np.isfinite(arr)):
        raise ParseError("non-finite entry", field=key, line=_line_of(text, key))
    return arr


def model_from_dict(doc, text=""):
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    kind = doc.get("kind")
    if kind not in ("quad", "fluid"):
        raise ParseError("kind must be 'quad' or 'fluid'", field="kind", line=_line_of(text, "kind"))
    n = _field(doc, text, "n", kind="int")
    p = _field(doc, text, "p", kind="int")
    if "N" in doc and isinstance(doc["N"], list) and len(doc["N"]) == 0:
        raise ParseError("N must list n coefficient matrices, got none", field="N", line=_line_of(text, "N"))
    N = _field(doc, text, "N", ndim=3)
    if N.shape != (n, n, n):
        raise ParseError(f"expected {n} matrices of size {n}x{n}, got shape {N.shape}", field="N", line=_line_of(text, "N"))
    C = _field(doc, text, "C", ndim=2)
    if C.shape != (p, n):
        raise ParseError(f"expected shape ({p}, {n}), got {C.shape}", field="C", line=_line_of(text, "C"))
    if kind == "quad":
        A = _field(doc, text, "A", ndim=2)
        if A.shape != (n, n):
            raise ParseError(f"expected shape ({n}, {n}), got {A.shape}", field="A", line=_line_of(text, "A"))
        return build_system(A, N, C)
    lam = _field(doc, text, "lambda", ndim=1)
    c = _field(doc, text, "c", ndim=1)
    Re = _field(doc, text, "Re", kind="number")
    if lam.shape != (n,) or c.shape != (n,):
        raise ParseError(f"lambda and c must have length {n}", field="lambda" if lam.shape != (n,) else "c")
    if np.any(lam <= 0):
        raise ParseError("decay constants must be positive", field="lambda", line=_line_of(text, "lambda"))
    if Re <= 0:
        raise ParseError("Re must be positive", field="Re", line=_line_of(text, "Re"))
    return build_fluid(lam, c, Re, N, C)


def model_to_dict(model) -> dict:
    if isinstance(model, QuadSystem):
        return {
            "kind": "quad",
            "n": model.n,
            "p": model.p,
            "A": model.A.tolist(),
            "N": model.N.tolist(),
            "C": model.C.tolist(),
        }
    if isinstance(model, FluidModel):
        return {
            "kind": "fluid",
            "n": model.n,
            "p": model.C.shape[0],
            "N": model.N.tolist(),
            "C": model.C.tolist(),
            "lambda": model.lam.tolist(),
            "c": model.c.tolist(),
            "Re": model.Re,
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def loads_model(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return model_from_dict(doc, text)


def load_model(path):
    return loads_model(Path(path).read_text())


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n"


def save_model(model, path):
    from .serialize import atomic_write_text

    atomic_write_text(path, dumps_model(model))
