"""Foundational numeric types and kernels: complex polynomials, small dense
matrices, deterministic parameter sampling, multiset comparison.

Everything downstream (Bethe systems, Q-polynomial chains, Lax matrices)
is built from CPoly / ndarray values produced here.  All randomness goes
through explicit 64-bit seeds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg

TRIM_TOL = 1e-13


class QmirrorError(Exception):
    pass


class InvalidArgument(QmirrorError):
    pass


class NumericalFailure(QmirrorError):
    pass


class InvalidQuiver(QmirrorError):
    pass


class NotRealizable(QmirrorError):
    pass


class Unsupported(QmirrorError):
    pass


def _as_complex_array(coeffs) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(coeffs, dtype=np.complex128))
    if arr.ndim != 1:
        raise InvalidArgument("coefficient array must be one-dimensional")
    return arr


class CPoly:
    """Univariate polynomial with complex coefficients, ascending degree.

    The zero polynomial is represented by an empty coefficient array.
    Representations are trimmed of trailing (near-)zeros at relative
    tolerance TRIM_TOL after every operation, so degree bookkeeping in
    iterated QQ constructions stays honest.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs=()):
        arr = _as_complex_array(coeffs) if len(coeffs) else np.zeros(0, dtype=np.complex128)
        self.coeffs = _trim(arr)

    # -- basic structure ------------------------------------------------

    @property
    def degree(self) -> int:
        # zero polynomial gets degree -1 (finite sentinel for "-infinity")
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return len(self.coeffs) == 0

    def __call__(self, z):
        if self.is_zero():
            return np.zeros_like(np.asarray(z, dtype=np.complex128)) if np.ndim(z) else 0j
        return np.polynomial.polynomial.polyval(z, self.coeffs)

    def coeff(self, k: int) -> complex:
        if k < 0 or k >= len(self.coeffs):
            return 0j
        return complex(self.coeffs[k])

    @property
    def lead(self) -> complex:
        if self.is_zero():
            raise InvalidArgument("zero polynomial has no leading coefficient")
        return complex(self.coeffs[-1])

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other) -> "CPoly":
        other = _coerce(other)
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        return CPoly(np.polynomial.polynomial.polyadd(self.coeffs, other.coeffs))

    def __sub__(self, other) -> "CPoly":
        other = _coerce(other)
        if other.is_zero():
            return self
        if self.is_zero():
            return CPoly(-other.coeffs)
        return CPoly(np.polynomial.polynomial.polysub(self.coeffs, other.coeffs))

    def __mul__(self, other) -> "CPoly":
        if np.isscalar(other):
            if self.is_zero():
                return CPoly()
            return CPoly(self.coeffs * complex(other))
        other = _coerce(other)
        if self.is_zero() or other.is_zero():
            return CPoly()
        return CPoly(np.polynomial.polynomial.polymul(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def __neg__(self) -> "CPoly":
        return CPoly(-self.coeffs) if not self.is_zero() else CPoly()

    def divmod(self, other: "CPoly") -> tuple["CPoly", "CPoly"]:
        other = _coerce(other)
        if other.is_zero():
            raise InvalidArgument("polynomial division by zero")
        if self.is_zero():
            return CPoly(), CPoly()
        quo, rem = np.polynomial.polynomial.polydiv(self.coeffs, other.coeffs)
        return CPoly(quo), CPoly(rem)

    def monic(self) -> "CPoly":
        if self.is_zero():
            raise InvalidArgument("cannot normalize the zero polynomial")
        return CPoly(self.coeffs / self.coeffs[-1])

    def dilate(self, q: complex) -> "CPoly":
        return poly_dilate(self, q)

    def roots(self) -> np.ndarray:
        if self.degree < 1:
            return np.zeros(0, dtype=np.complex128)
        return poly_roots(self)

    # -- misc --------------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, CPoly):
            return NotImplemented
        return self.coeffs.shape == other.coeffs.shape and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self):
        if self.is_zero():
            return "CPoly(0)"
        terms = ", ".join(f"{c:.6g}" for c in self.coeffs)
        return f"CPoly([{terms}])"


def _trim(arr: np.ndarray) -> np.ndarray:
    if len(arr) == 0:
        return arr
    scale = np.max(np.abs(arr))
    if scale == 0.0 or not np.isfinite(scale):
        if not np.isfinite(scale):
            raise NumericalFailure("non-finite polynomial coefficients")
        return np.zeros(0, dtype=np.complex128)
    keep = len(arr)
    while keep > 0 and abs(arr[keep - 1]) <= TRIM_TOL * scale:
        keep -= 1
    return arr[:keep].copy()


def _coerce(p) -> CPoly:
    if isinstance(p, CPoly):
        return p
    if np.isscalar(p):
        return CPoly([complex(p)])
    raise InvalidArgument(f"cannot coerce {type(p)!r} to CPoly")


def poly_from_roots(roots: Iterable[complex], leading: complex = 1.0) -> CPoly:
    """leading * prod (z - r) over the given roots."""
    leading = complex(leading)
    if leading == 0:
        raise InvalidArgument("leading coefficient must be nonzero")
    roots = list(roots)
    if not roots:
        return CPoly([leading])
    coeffs = np.polynomial.polynomial.polyfromroots(np.asarray(roots, dtype=np.complex128))
    return CPoly(coeffs * leading)


def poly_dilate(p: CPoly, q: complex) -> CPoly:
    """Pull back z -> q*z: coefficient of z^k picks up q^k."""
    p = _coerce(p)
    if p.is_zero():
        return CPoly()
    q = complex(q)
    powers = q ** np.arange(len(p.coeffs))
    return CPoly(p.coeffs * powers)


def _perm_sign(perm: tuple[int, ...]) -> int:
    inv = sum(1 for i in range(len(perm)) for j in range(i + 1, len(perm))
              if perm[i] > perm[j])
    return -1 if inv % 2 else 1


def char_poly(A: np.ndarray) -> CPoly:
    """det(u*1 - A) as a monic CPoly in u.

    Sizes <= 5 use exact cofactor (Leibniz) expansion, which keeps
    structural zeros exact.  Larger sizes rebuild the polynomial from the
    Schur spectrum: trace-recursion schemes lose too many digits to the
    cancellation between invariants once moduli spread over several
    orders, while this route stays near roundoff through size 64.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgument("char_poly requires a square matrix")
    n = A.shape[0]
    if n > 64:
        raise InvalidArgument("char_poly limited to size <= 64")
    if n == 0:
        return CPoly([1.0])
    if n <= 5:
        ent = [[np.array([-A[i, i], 1.0], dtype=np.complex128) if i == j
                else np.array([-A[i, j]], dtype=np.complex128)
                for j in range(n)] for i in range(n)]
        coeffs = np.zeros(n + 1, dtype=np.complex128)
        for perm in itertools.permutations(range(n)):
            term = np.array([1.0], dtype=np.complex128)
            for i, j in enumerate(perm):
                term = np.convolve(term, ent[i][j])
            coeffs[: len(term)] += _perm_sign(perm) * term
        return CPoly(coeffs)
    return poly_from_roots(np.linalg.eigvals(A))


def poly_roots(p: CPoly, tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """All complex roots with multiplicity, by Aberth-Ehrlich iteration.

    Exact zero roots are stripped first (they defeat the relative
    correction step), then the remaining reduced polynomial is run through
    simultaneous iteration with a Newton polish at the end.
    """
    p = _coerce(p)
    if p.degree < 1:
        return np.zeros(0, dtype=np.complex128)
    c = p.coeffs.copy()
    scale = np.max(np.abs(c))
    c = c / scale

    # strip roots at the origin
    nz = 0
    while nz < len(c) - 1 and abs(c[nz]) <= 1e-14 * np.max(np.abs(c)):
        nz += 1
    zero_roots = np.zeros(nz, dtype=np.complex128)
    c = c[nz:]
    n = len(c) - 1
    if n == 0:
        return zero_roots

    c = c / c[-1]
    deriv = np.polynomial.polynomial.polyder(c)

    # initial guesses on a circle sized by the coefficient bound
    radius = 1.0 + np.max(np.abs(c[:-1])) if n > 0 else 1.0
    angles = 2.0 * np.pi * (np.arange(n) + 0.5) / n + 0.4
    roots = (0.5 * radius) * np.exp(1j * angles)

    converged = False
    for _ in range(max_iter):
        pv = np.polynomial.polynomial.polyval(roots, c)
        dv = np.polynomial.polynomial.polyval(roots, deriv)
        dv = np.where(dv == 0, 1e-300, dv)
        newton = pv / dv
        diff = roots[:, None] - roots[None, :]
        np.fill_diagonal(diff, np.inf)
        repulse = np.sum(1.0 / diff, axis=1)
        denom = 1.0 - newton * repulse
        denom = np.where(denom == 0, 1e-300, denom)
        step = newton / denom
        roots = roots - step
        if np.max(np.abs(step)) < tol * (1.0 + np.max(np.abs(roots))):
            converged = True
            break
    if not converged:
        raise NumericalFailure("root finding did not converge in %d iterations" % max_iter)

    # Newton polish, a few sweeps
    for _ in range(3):
        pv = np.polynomial.polynomial.polyval(roots, c)
        dv = np.polynomial.polynomial.polyval(roots, deriv)
        mask = np.abs(dv) > 1e-250
        roots = np.where(mask, roots - pv / np.where(mask, dv, 1.0), roots)

    return np.concatenate([zero_roots, roots])


def eigenvalues(A: np.ndarray) -> np.ndarray:
    """Spectrum with multiplicity via the characteristic polynomial roots."""
    return poly_roots(char_poly(A))


@dataclass
class LstsqResult:
    x: np.ndarray
    residual: float
    rank_deficient: bool


def lstsq_solve(A: np.ndarray, b) -> LstsqResult:
    """Minimize ||A x - b||_2 with column-pivoted QR; flags rank deficiency."""
    A = np.asarray(A, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if A.ndim != 2:
        raise InvalidArgument("matrix must be 2d")
    if A.shape[0] < A.shape[1]:
        raise InvalidArgument("lstsq_solve requires rows >= cols")
    # cond is relative to the largest singular value, i.e. 1e-10 * ||A||
    x, _res, rank, _sv = scipy.linalg.lstsq(A, b, lapack_driver="gelsy", cond=1e-10)
    residual = float(np.linalg.norm(A @ x - b))
    return LstsqResult(x=x, residual=residual, rank_deficient=rank < A.shape[1])


# -- multiset comparison --------------------------------------------------


def _lex_sort(values: np.ndarray) -> np.ndarray:
    order = np.lexsort((values.imag, values.real))
    return values[order]


def multiset_match(a, b, tol: float = 1e-8) -> tuple[bool, float]:
    """Compare two complex multisets: lexicographic sort then greedy
    nearest-neighbor pairing.  Returns (matched, worst_relative_error).
    """
    a = np.asarray(list(a), dtype=np.complex128)
    b = np.asarray(list(b), dtype=np.complex128)
    if a.shape != b.shape:
        return False, float("inf")
    if len(a) == 0:
        return True, 0.0
    a = _lex_sort(a)
    b = _lex_sort(b)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    used = np.zeros(len(b), dtype=bool)
    worst = 0.0
    for ai in a:
        dist = np.abs(b - ai)
        dist[used] = np.inf
        j = int(np.argmin(dist))
        used[j] = True
        worst = max(worst, float(dist[j]) / scale)
    return worst < tol, worst


# -- deterministic parameter sampling --------------------------------------


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def generic_complex(rng: np.random.Generator, n: int | None = None):
    """Generic nonzero complex values: modulus uniform in [0.6, 1.8],
    uniform phase."""
    shape = () if n is None else (n,)
    mod = rng.uniform(0.6, 1.8, size=shape)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    out = mod * np.exp(1j * phase)
    return complex(out) if n is None else out.astype(np.complex128)


def generic_hbar(rng: np.random.Generator) -> complex:
    """Generic hbar, rejected while any power <= 12 sits near 1
    (working-precision version of "not a root of unity")."""
    for _ in range(1000):
        h = generic_complex(rng)
        powers = h ** np.arange(1, 13)
        if np.min(np.abs(powers - 1.0)) >= 0.05:
            return h
    raise NumericalFailure("failed to sample a generic hbar")


# -- quiver -----------------------------------------------------------------


@dataclass(frozen=True)
class Quiver:
    """Framed A_r quiver: gauge ranks v, framing ranks w, nodes 1..n.

    Construction enforces only shape (positive gauge ranks, nonnegative
    framing, at least one framing somewhere); the convexity condition that
    makes the brane picture realizable is exposed as is_valid() and checked
    by the operations that require it.
    """

    v: tuple[int, ...]
    w: tuple[int, ...]

    def __post_init__(self):
        v = tuple(int(x) for x in self.v)
        w = tuple(int(x) for x in self.w)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)
        if len(v) == 0 or len(v) != len(w):
            raise InvalidArgument("v and w must be equal-length, nonempty")
        if any(x <= 0 for x in v):
            raise InvalidArgument("gauge ranks must be positive")
        if any(x < 0 for x in w):
            raise InvalidArgument("framing ranks must be nonnegative")
        if sum(w) < 1:
            raise InvalidArgument("need at least one framing")

    @property
    def n(self) -> int:
        return len(self.v)

    def vpad(self, i: int) -> int:
        # v_0 = v_{n+1} = 0 padding convention
        if 1 <= i <= self.n:
            return self.v[i - 1]
        return 0

    def is_valid(self) -> bool:
        return all(self.vpad(i - 1) + self.vpad(i + 1) + self.w[i - 1] >= 2 * self.v[i - 1]
                   for i in range(1, self.n + 1))

    def reflected(self) -> "Quiver":
        return Quiver(self.v[::-1], self.w[::-1])

    def total_dim(self) -> int:
        return sum(self.v)
