"""Trigonometric Ruijsenaars-Schneider frames.

Lax matrices and closed-form Hamiltonians for the tRS chain, the
Calogero-Moser rank-one residual, momenta read off from Bethe data in
both the electric (framing-side coordinates) and magnetic (twist-side
coordinates) frames, and the degenerate Lax structure that appears when
coordinates collapse onto hbar-strings.

Conventions fixed here and relied on by the tests:

* Hamiltonian weights are (x_i - hbar*x_j)/(x_i - x_j).  A magnetic
  frame built from Bethe data of a quiver with anisotropy hbar carries
  frame hbar 1/hbar; the flip is applied by the caller that builds the
  frame, not inside `hamiltonians`.
* Spectra and momenta are only pinned down up to integer powers of hbar
  (pure twist rescalings).  Those integers are fitted once per quiver
  shape from a generic solved instance and cached; they never depend on
  the continuous parameters.
"""

import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import (
    CPoly,
    InvalidArgument,
    NumericalFailure,
    Quiver,
    Unsupported,
    char_poly,
    eigenvalues,
    generic_complex,
    generic_hbar,
    multiset_match,
    rng_from_seed,
)
from .bethe import (
    ModelParams,
    PoleEncountered,
    SolveOptions,
    build_system,
    solve,
)
from . import qqsys

__all__ = [
    "COLLISION_TOL",
    "CoordinateCollision",
    "InvalidPattern",
    "NotPartialFlagOrder",
    "DegenerateZero",
    "CalibrationFailed",
    "ResonancePattern",
    "TRSFrame",
    "CMResidual",
    "CalibratedOffsets",
    "lax",
    "cm_residual",
    "hamiltonians",
    "electric_momenta",
    "magnetic_momenta",
    "spectrum_target",
    "calibrate_offsets",
    "resonance_rescale",
]

# relative pairwise-distance floor below which coordinates count as equal
COLLISION_TOL = 1e-10

_HAM_MAX_SIZE = 20


class CoordinateCollision(InvalidArgument):
    """Two tRS coordinates coincide and no resonance pattern declares it."""


class InvalidPattern(InvalidArgument):
    """Resonance pattern does not describe the coordinates it was given."""


class NotPartialFlagOrder(InvalidArgument):
    """Gauge ranks are not weakly increasing; canonicalize first."""


class DegenerateZero(NumericalFailure):
    """The commutator ℏMT - TM vanished; rank-one ratio is undefined."""


class CalibrationFailed(NumericalFailure):
    """No integer hbar-power reconciles computed and declared spectra."""


@dataclass(frozen=True)
class ResonancePattern:
    """Grouping of L coordinates into consecutive hbar-strings.

    ``groups`` lists (base index, length) pairs; the string occupying
    slots base..base+length-1 is b, hbar*b, ..., hbar^{length-1}*b.
    Groups must tile 0..L-1 in order.
    """

    groups: tuple[tuple[int, int], ...]

    def __post_init__(self):
        expect = 0
        for base, length in self.groups:
            if length < 1:
                raise InvalidPattern(f"string length {length} < 1")
            if base != expect:
                raise InvalidPattern(
                    f"group base {base} breaks consecutive coverage (expected {expect})"
                )
            expect = base + length
        if not self.groups:
            raise InvalidPattern("pattern has no groups")

    @classmethod
    def from_lengths(cls, lengths: Sequence[int]) -> "ResonancePattern":
        groups = []
        base = 0
        for ln in lengths:
            groups.append((base, int(ln)))
            base += int(ln)
        return cls(tuple(groups))

    @property
    def total(self) -> int:
        base, length = self.groups[-1]
        return base + length

    def is_trivial(self) -> bool:
        return all(length == 1 for _, length in self.groups)

    def predecessor(self, j: int) -> Optional[int]:
        """Index one slot down the same string, or None for string heads."""
        for base, length in self.groups:
            if base <= j < base + length:
                return j - 1 if j > base else None
        raise InvalidPattern(f"index {j} outside pattern of size {self.total}")


@dataclass(frozen=True)
class TRSFrame:
    """Coordinates, momenta and anisotropy of one tRS configuration."""

    coords: tuple[complex, ...]
    momenta: tuple[complex, ...]
    hbar: complex
    frame_kind: str = "electric"
    pattern: Optional[ResonancePattern] = None

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(complex(c) for c in self.coords))
        object.__setattr__(self, "momenta", tuple(complex(p) for p in self.momenta))
        object.__setattr__(self, "hbar", complex(self.hbar))
        if len(self.coords) != len(self.momenta):
            raise InvalidArgument("coords and momenta lengths differ")
        if not self.coords:
            raise InvalidArgument("empty frame")
        if self.frame_kind not in ("electric", "magnetic"):
            raise InvalidArgument(f"unknown frame_kind {self.frame_kind!r}")
        if self.pattern is not None and self.pattern.total != len(self.coords):
            raise InvalidPattern(
                f"pattern covers {self.pattern.total} slots, frame has {len(self.coords)}"
            )

    @property
    def size(self) -> int:
        return len(self.coords)


class CMResidual(float):
    """Rank-one defect ratio sigma_2/sigma_1 carrying the best factors.

    Behaves as a plain float; ``u`` and ``v`` give the leading dyad so
    that u[:, None] * v[None, :] is the closest rank-one matrix.
    """

    u: np.ndarray
    v: np.ndarray

    def __new__(cls, ratio: float, u: np.ndarray, v: np.ndarray):
        obj = super().__new__(cls, ratio)
        obj.u = u
        obj.v = v
        return obj


@dataclass(frozen=True)
class CalibratedOffsets:
    """Integer spectrum labeling fitted once per quiver shape."""

    sign: int
    deltas: tuple[int, ...]


def _check_distinct(coords: np.ndarray) -> None:
    L = len(coords)
    scale = max(1.0, float(np.max(np.abs(coords))))
    for i in range(L):
        for j in range(i + 1, L):
            if abs(coords[i] - coords[j]) <= COLLISION_TOL * scale:
                raise CoordinateCollision(
                    f"coordinates {i} and {j} coincide to {COLLISION_TOL} relative"
                )


def _lax_plain(chi: np.ndarray, p: np.ndarray, h: complex) -> np.ndarray:
    L = len(chi)
    T = np.empty((L, L), dtype=np.complex128)
    for j in range(L):
        den = 1.0 + 0.0j
        for k in range(L):
            if k != j:
                den *= chi[j] - chi[k]
        for i in range(L):
            num = 1.0 + 0.0j
            for k in range(L):
                if k != i:
                    num *= chi[j] - h * chi[k]
            T[j, i] = p[j] * num / den
    return T


def _snap_strings(chi: np.ndarray, pattern: ResonancePattern, h: complex,
                  tol: float) -> np.ndarray:
    """Exact string coordinates b, h*b, ... rebuilt from the group bases.

    Sub-slot values are produced by the same float multiplication the Lax
    entries use, so factors (chi_j - h*chi_{j-1}) cancel to exact zeros.
    """
    out = np.array(chi, dtype=np.complex128)
    for base, length in pattern.groups:
        for d in range(1, length):
            target = h * out[base + d - 1]
            if abs(chi[base + d] - target) > tol * max(abs(target), 1e-300):
                raise InvalidPattern(
                    f"coordinate {base + d} is not hbar * coordinate {base + d - 1} "
                    f"within tolerance {tol}"
                )
            out[base + d] = target
    return out


def lax(frame: TRSFrame) -> np.ndarray:
    """Lax matrix T[j,i] = p_j * prod_{k!=i}(x_j - h x_k) / prod_{k!=j}(x_j - x_k).

    With a nontrivial resonance pattern attached the coordinates are
    snapped onto exact hbar-strings first and the matrix is built in the
    Slodowy gauge: rows of slots with a predecessor vanish except for the
    single entry hbar^2 * p_j at the predecessor column, while head rows
    stay full and carry the diagonal weights that make that normalization
    consistent.  Within a string the weights chain by hbar^4 over the
    link entry; across strings they differ by the per-string constant
    prod(own non-head coords - head) * prod(head - foreign non-head
    coords), and rows of strings of length >= 2 are dressed by hbar^-2.
    A trivial pattern reproduces the plain matrix exactly.
    """
    chi = np.asarray(frame.coords, dtype=np.complex128)
    p = np.asarray(frame.momenta, dtype=np.complex128)
    h = complex(frame.hbar)
    if frame.pattern is None or frame.pattern.is_trivial():
        _check_distinct(chi)
        return _lax_plain(chi, p, h)

    pattern = frame.pattern
    chi_s = _snap_strings(chi, pattern, h, tol=1e-6)
    _check_distinct(chi_s)
    L = len(chi_s)
    lam = _lax_plain(chi_s, np.ones(L, dtype=np.complex128), h)

    pred = [pattern.predecessor(j) for j in range(L)]
    d = np.ones(L, dtype=np.complex128)
    for j in range(L):
        if pred[j] is not None:
            link = lam[j, pred[j]]
            if link == 0:
                raise PoleEncountered(
                    f"string link entry ({j},{pred[j]}) vanished; data degenerate"
                )
            d[j] = d[pred[j]] * h**4 / link

    nonhead = [j for j in range(L) if pred[j] is not None]
    group_of = np.empty(L, dtype=np.intp)
    sigma = np.ones(L, dtype=np.complex128)
    for g, (base, length) in enumerate(pattern.groups):
        group_of[base: base + length] = g
        if length > 1:
            sigma[base: base + length] = 1.0 / (h * h)
    const = np.ones(len(pattern.groups), dtype=np.complex128)
    for g, (base, length) in enumerate(pattern.groups):
        b = chi_s[base]
        for j in nonhead:
            const[g] *= (chi_s[j] - b) if group_of[j] == g else (b - chi_s[j])
    d *= const[group_of]

    T = np.zeros((L, L), dtype=np.complex128)
    for j in range(L):
        if pred[j] is None:
            for i in range(L):
                T[j, i] = sigma[j] * (d[j] / d[i]) * p[j] * lam[j, i]
        else:
            # the whole row cancels against the string condition except at
            # the predecessor column, where the gauge fixes the value
            T[j, pred[j]] = h * h * p[j]
    return T


def cm_residual(M: np.ndarray, T: np.ndarray, hbar: complex) -> CMResidual:
    """Rank-one defect of R = M@T - hbar*T@M as sigma_2/sigma_1.

    This orientation pairs with the row-momentum Lax convention used by
    `lax`: entrywise R[j,i] = T[j,i]*(x_j - hbar*x_i), which restores
    the column-skipped numerator factor and collapses to a single dyad.
    (The transposed convention would need hbar*M@T - T@M instead; the
    ratio is insensitive to the overall scalar between the two.)

    Exactly rank-one R gives 0.  The returned value also exposes the
    best rank-one factors (attributes u, v).  A vanishing R has no
    meaningful ratio and raises DegenerateZero.
    """
    M = np.asarray(M, dtype=np.complex128)
    T = np.asarray(T, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument("M must be square")
    if M.shape != T.shape:
        raise InvalidArgument("M and T shapes differ")
    R = M @ T - complex(hbar) * (T @ M)
    U, s, Vh = np.linalg.svd(R)
    if s[0] < 1e-300:
        raise DegenerateZero("M@T - hbar*T@M is numerically zero")
    ratio = float(s[1] / s[0]) if len(s) > 1 else 0.0
    return CMResidual(ratio, U[:, 0] * s[0], Vh[0, :].copy())


def hamiltonians(frame: TRSFrame) -> tuple[complex, ...]:
    """H_k as the closed-form sum over k-subsets with tRS weights.

    Also validates the computed values against the characteristic
    polynomial of the Lax matrix through det(u*1 - T) =
    sum_k (-1)^k hbar^{k(k-1)/2} H_k u^{L-k}; a violation beyond 1e-9
    relative means inconsistent inputs and raises NumericalFailure.
    """
    if frame.pattern is not None and not frame.pattern.is_trivial():
        raise InvalidArgument("hamiltonians requires non-resonant coordinates")
    L = frame.size
    if L > _HAM_MAX_SIZE:
        raise Unsupported(f"subset enumeration capped at L = {_HAM_MAX_SIZE}")
    chi = np.asarray(frame.coords, dtype=np.complex128)
    p = np.asarray(frame.momenta, dtype=np.complex128)
    h = complex(frame.hbar)
    _check_distinct(chi)

    diff = chi[:, None] - chi[None, :]
    np.fill_diagonal(diff, 1.0)
    W = (chi[:, None] - h * chi[None, :]) / diff
    np.fill_diagonal(W, 1.0)

    out = _kernels.ham_sums(W, p)
    H = tuple(complex(out[k]) for k in range(1, L + 1))

    cp = char_poly(lax(frame))
    for k in range(1, L + 1):
        lhs = cp.coeff(L - k)
        rhs = (-1) ** k * h ** (k * (k - 1) // 2) * H[k - 1]
        if abs(lhs - rhs) > 1e-9 * max(1.0, abs(lhs), abs(rhs)):
            raise NumericalFailure(
                f"Hamiltonian/char-poly bridge violated at k={k}: {lhs} vs {rhs}"
            )
    return H


def electric_momenta(sol, q: Quiver, params: ModelParams) -> tuple[complex, ...]:
    """Electric-frame momenta from the top-node Bethe roots.

    p_i = xi_{r+1} * hbar^{-v_r} * prod_j (hbar a_i - s_j)/(s_j - a_i)
    over the top-node roots s, one momentum per framing value a_i, in
    the flattened framing order.  Expects solutions of the calibrated
    form of the Bethe system; no extra hbar powers are applied here
    (the matching spectrum carries the calibrated offsets instead).
    """
    params.check_shapes(q)
    r = q.n
    s = np.asarray(sol.roots[r - 1], dtype=np.complex128)
    h = complex(params.hbar)
    vr = q.v[r - 1]
    avals = [a for node in params.a for a in node]
    scale = max(1.0, float(np.max(np.abs(s))) if len(s) else 1.0)
    out = []
    for a in avals:
        den = s - a
        if len(den) and np.min(np.abs(den)) < 1e-12 * scale:
            raise PoleEncountered(
                "framing value coincides with a top-node Bethe root"
            )
        out.append(complex(params.xi[r] * h ** (-vr) * np.prod(h * a - s) / np.prod(den)))
    return tuple(out)


def _flag_multiplicities(q: Quiver) -> tuple[int, ...]:
    L = sum(q.w)
    vpad = (0,) + q.v + (L,)
    mus = tuple(vpad[i] - vpad[i - 1] for i in range(1, q.n + 2))
    if any(m < 0 for m in mus):
        raise NotPartialFlagOrder(
            "gauge ranks must be weakly increasing for a string spectrum"
        )
    return mus


_offset_cache: dict[tuple, CalibratedOffsets] = {}
_offset_lock = threading.Lock()


def _loggable_hbar(rng) -> complex:
    # calibration reads integers off log|.|/log|hbar|; keep |hbar| away from 1
    for _ in range(1000):
        h = generic_hbar(rng)
        if abs(np.log(abs(h))) >= 0.15:
            return h
    raise NumericalFailure("failed to sample hbar with non-unit modulus")


def _fit_offsets(ev: np.ndarray, xi: Sequence[complex], h: complex,
                 mus: Sequence[int]) -> CalibratedOffsets:
    loghm = np.log(abs(h))
    for sign in (1, -1):
        deltas = []
        used = np.zeros(len(ev), dtype=bool)
        ok = True
        for i, mu in enumerate(mus):
            ints = []
            for j, lam in enumerate(ev):
                if used[j]:
                    continue
                t = np.log(abs(lam / (sign * xi[i]))) / loghm
                m = int(round(t))
                if abs(lam - sign * xi[i] * h**m) <= 1e-6 * max(1.0, abs(lam)):
                    ints.append((m, j))
            if len(ints) < mu:
                ok = False
                break
            ints.sort()
            chosen = ints[:mu]
            exps = [m for m, _ in chosen]
            if exps != list(range(exps[0], exps[0] + mu)):
                ok = False
                break
            for _, j in chosen:
                used[j] = True
            deltas.append(exps[0] if mu else 0)
        if ok and all(used):
            return CalibratedOffsets(sign, tuple(deltas))
    raise CalibrationFailed("no integer hbar-offset labeling fits the spectrum")


def calibrate_offsets(q: Quiver, seed: int = 0) -> CalibratedOffsets:
    """Fit the integer spectrum labeling of the electric frame for q.

    Solves one generic instance, reads the electric Lax spectrum, and
    finds the sign and integer exponents delta_i such that the
    eigenvalues are {sign * xi_i * hbar^(l + delta_i) : l < mu_i}.  The
    integers depend only on the quiver shape and are cached; failure to
    fit within |delta| <= L raises CalibrationFailed.
    """
    key = (q.v, q.w)
    hit = _offset_cache.get(key)
    if hit is not None:
        return hit
    mus = _flag_multiplicities(q)
    L = sum(q.w)
    with _offset_lock:
        hit = _offset_cache.get(key)
        if hit is not None:
            return hit
        rng = rng_from_seed(seed)
        a = tuple(tuple(generic_complex(rng, w)) for w in q.w)
        xi = tuple(generic_complex(rng, q.n + 1))
        h = _loggable_hbar(rng)
        params = ModelParams(a, xi, h)
        system = build_system(q, params, form="calibrated")
        sols = []
        for attempt, starts in enumerate((300, 900)):
            sols = solve(system, SolveOptions(seed=seed + attempt + 1, starts=starts))
            if sols:
                break
        if not sols:
            raise CalibrationFailed("no Bethe solution found for the probe instance")
        mom = electric_momenta(sols[0], q, params)
        avals = tuple(x for node in a for x in node)
        frame = TRSFrame(avals, mom, h, "electric")
        ev = eigenvalues(lax(frame))
        fit = _fit_offsets(ev, xi, h, mus)
        if any(abs(dd) > L for dd in fit.deltas):
            raise CalibrationFailed(f"fitted offsets {fit.deltas} exceed |delta| <= {L}")
        target = [fit.sign * xi[i] * h ** (l + fit.deltas[i])
                  for i, mu in enumerate(mus) for l in range(mu)]
        okm, err = multiset_match(ev, np.asarray(target), tol=1e-7)
        if not okm:
            raise CalibrationFailed(f"offset fit verification failed ({err:.2e})")
        _offset_cache[key] = fit
        return fit


def spectrum_target(q: Quiver, xi: Sequence[complex], hbar: complex) -> tuple[complex, ...]:
    """Predicted electric Lax spectrum: calibrated xi-strings.

    Multiset {sign * xi_i * hbar^(l + delta_i) : l = 0..mu_i-1} with
    mu_i = v_i - v_{i-1} (v_0 = 0, v_{n+1} = L) and (sign, delta) from
    calibrate_offsets.  Requires weakly increasing gauge ranks.
    """
    mus = _flag_multiplicities(q)
    cal = calibrate_offsets(q)
    h = complex(hbar)
    return tuple(cal.sign * complex(xi[i]) * h ** (l + cal.deltas[i])
                 for i, mu in enumerate(mus) for l in range(mu))


_mag_cache: dict[tuple, int] = {}
_mag_lock = threading.Lock()


def magnetic_momenta(data: "qqsys.QQData") -> tuple[complex, ...]:
    """Magnetic-frame momenta from the section components.

    Component p of the QQ-section contributes (-1)^deg * s_p(0)/lead,
    the product of its roots; for monic degree-1 components this is the
    negated constant term.  The values pair with the twists xi_1..xi_{n+1}
    in order, and the matching frame carries hbar' = 1/hbar.

    When every component has degree 1 (weakly decreasing gauge ranks,
    e.g. reflected flags) the output is dressed by the integer hbar
    power, fitted once per quiver shape, that makes H_1 = e_1(framings)
    in the flipped frame; mixed-degree sections are returned undressed
    and consumers calibrate against their own targets.
    """
    section = data.section
    if section is None:
        data = qqsys.extend_chain(data)
        section = data.section
    q = data.quiver
    params = data.params
    h = complex(params.hbar)
    for i in range(1, q.n + 1):
        if abs(complex(data.qp(i)(0.0))) < 1e-12:
            raise PoleEncountered(f"Q^+_{i} vanishes at 0; momentum ratios degenerate")
    raw = []
    for comp in section:
        if comp.degree < 1:
            raise PoleEncountered("constant section component has no momentum")
        raw.append((-1) ** comp.degree * comp.coeff(0) / comp.lead)

    if any(comp.degree != 1 for comp in section):
        return tuple(raw)

    key = (q.v, q.w)
    c = _mag_cache.get(key)
    if c is None:
        with _mag_lock:
            c = _mag_cache.get(key)
            if c is None:
                c = _fit_mag_dressing(q, params, raw)
                _mag_cache[key] = c
    return tuple(h**c * m for m in raw)


def _fit_mag_dressing(q: Quiver, params: ModelParams, raw: Sequence[complex]) -> int:
    h = complex(params.hbar)
    hp = 1.0 / h
    xi = np.asarray(params.xi, dtype=np.complex128)
    L = len(xi)
    diff = xi[:, None] - xi[None, :]
    np.fill_diagonal(diff, 1.0)
    W = (xi[:, None] - hp * xi[None, :]) / diff
    np.fill_diagonal(W, 1.0)
    w1 = np.prod(W, axis=1)
    h1 = complex(np.dot(w1, np.asarray(raw, dtype=np.complex128)))
    target = sum(a for node in params.a for a in node)
    if h1 == 0:
        raise CalibrationFailed("H_1 of the raw magnetic momenta vanished")
    logh = np.log(abs(h))
    if abs(logh) < 1e-3:
        raise CalibrationFailed("|hbar| too close to 1 to read off an integer dressing")
    c = int(round(np.log(abs(target / h1)) / logh))
    if abs(h**c * h1 - target) > 1e-6 * max(1.0, abs(target)):
        raise CalibrationFailed(
            "no integer hbar power reconciles magnetic H_1 with e_1(framings)"
        )
    return c


def resonance_rescale(frame: TRSFrame, pattern: ResonancePattern,
                      raw_momenta: Optional[Sequence[complex]] = None,
                      tol: float = 1e-2) -> TRSFrame:
    """Finite-momentum frame at a coordinate resonance.

    The input coordinates must already sit near the declared strings
    (each next member within ``tol`` relative of hbar times the
    previous).  Each string condition x_{u+1} = hbar*x_u rescales the
    lower momentum by (x_u - x_{u+1})/(hbar*x_u - x_{u+1}) and the upper
    by its inverse, which is exactly what cancels the Lax poles; middle
    slots of longer strings pick up both neighboring factors.  The
    output frame has the coordinates collapsed onto exact strings and
    the pattern attached.  Coordinates already exactly at the resonance
    carry no finite rescaling information and raise PoleEncountered.
    """
    if pattern.total != frame.size:
        raise InvalidPattern(
            f"pattern covers {pattern.total} slots, frame has {frame.size}"
        )
    chi = np.asarray(frame.coords, dtype=np.complex128)
    h = complex(frame.hbar)
    p = list(frame.momenta if raw_momenta is None else
             [complex(x) for x in raw_momenta])
    if len(p) != frame.size:
        raise InvalidArgument("raw_momenta length differs from frame size")

    for base, length in pattern.groups:
        for d in range(1, length):
            u = base + d - 1
            target = h * chi[u]
            gap = chi[u + 1] - target
            if abs(gap) > tol * max(abs(target), 1e-300):
                raise InvalidPattern(
                    f"coordinate {u + 1} is not within {tol} of hbar * coordinate {u}"
                )
            if abs(gap) < 1e-13 * max(abs(target), 1e-300):
                raise PoleEncountered(
                    "coordinates already collapsed; raw momenta carry no finite limit"
                )
            fac = (chi[u] - chi[u + 1]) / (h * chi[u] - chi[u + 1])
            p[u] *= fac
            p[u + 1] /= fac

    snapped = np.array(chi)
    for base, length in pattern.groups:
        for d in range(1, length):
            snapped[base + d] = h * snapped[base + d - 1]
    return TRSFrame(tuple(snapped), tuple(p), h, frame.frame_kind, pattern)
