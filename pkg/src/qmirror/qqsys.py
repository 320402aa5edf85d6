"""Extended QQ-system machinery.

Everything downstream of a solved Bethe instance lives here: Q-minus
polynomials from the bilinear QQ identity, the chain polynomials
Q^-_{i..j}, oper section components, Backlund moves, quantum Wronskian
minors, and the DD-scaled form of the system.

Node indices are 1-based throughout, matching the twist convention
(node i sits between twists xi_i and xi_{i+1}).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import branes
from .bethe import BetheSolution, ModelParams
from .core import (
    CPoly,
    InvalidArgument,
    NotRealizable,
    NumericalFailure,
    Quiver,
    lstsq_solve,
    poly_from_roots,
)

CHAIN_TOL = 1e-7
DD_TOL = 1e-8


class ChainInconsistent(NumericalFailure):
    """A chain-level linear solve left a residual above tolerance."""

    def __init__(self, level: tuple[int, int], detail: str):
        self.level = level
        super().__init__(f"chain level {level}: {detail}")


class Degenerate(NumericalFailure):
    """Transformed Q-data has colliding roots; the move is not admissible."""


class WronskianMismatch(NumericalFailure):
    """Minor determinant is not divisible by the predicted singularity part."""


class DDInconsistent(NumericalFailure):
    """Scaled bilinear relation fails; input Q-data does not solve the system."""


class IllConditioned(NumericalFailure):
    """Twist ratios sit on (or too near) an hbar ladder; solve would be singular."""


# -- data ------------------------------------------------------------------


@dataclass(frozen=True)
class QQData:
    """One solved instance: monic Q^+ per node, matching Q^- and residuals.

    ``chain`` maps an inclusive 1-based node span (i, j) with j > i to
    Q^-_{i..j}; ``section`` is (s_1, ..., s_{n+1}) once extend_chain ran.
    """

    quiver: Quiver
    params: ModelParams
    qplus: tuple[CPoly, ...]
    qminus: tuple[CPoly, ...]
    residuals: tuple[float, ...]
    chain: Mapping[tuple[int, int], CPoly] | None = None
    section: tuple[CPoly, ...] | None = None

    def lam(self, i: int) -> CPoly:
        return poly_from_roots(self.params.a[i - 1])

    def qp(self, i: int) -> CPoly:
        # virtual boundary polynomials Q^+_0 = Q^+_{n+1} = 1
        if i == 0 or i == self.quiver.n + 1:
            return CPoly([1.0])
        return self.qplus[i - 1]


@dataclass(frozen=True)
class DDData:
    """Q-data multiplied into the singularity-free (DD) normalization."""

    quiver: Quiver
    params: ModelParams
    dplus: tuple[CPoly, ...]
    dminus: tuple[CPoly, ...]
    dchain: Mapping[tuple[int, int], CPoly]
    fpolys: tuple[CPoly, ...]  # F_0 .. F_n


# -- singularity bookkeeping ------------------------------------------------


def _pfactor(params: ModelParams, m: int) -> CPoly:
    # P_m(z) = Lambda_n Lambda_{n-1} ... Lambda_{n-m+1}(z)
    n = len(params.a)
    out = CPoly([1.0])
    for j in range(n - m + 1, n + 1):
        out = out * poly_from_roots(params.a[j - 1])
    return out


def wronskian_w(params: ModelParams, m: int) -> CPoly:
    """W_m(z) = prod_{i=1..m} P_i(hbar^{i-1} z), the minor singularity part."""
    h = params.hbar
    out = CPoly([1.0])
    for i in range(1, m + 1):
        out = out * _pfactor(params, i).dilate(h ** (i - 1))
    return out


def f_poly(params: ModelParams, k: int) -> CPoly:
    """F_k(z) = W_{n-k}(hbar^{-(n-k)} z); the DD multiplier at node k."""
    n = len(params.a)
    if not 0 <= k <= n + 1:
        raise InvalidArgument(f"F index {k} outside 0..{n + 1}")
    if k >= n:
        return CPoly([1.0])
    m = n - k
    return wronskian_w(params, m).dilate(params.hbar ** (-m))


# -- the bilinear solve ------------------------------------------------------


def _bilinear_solve(
    qp: CPoly, xi_lo: complex, xi_hi: complex, hbar: complex, rhs: CPoly, deg: int
) -> tuple[CPoly, float]:
    # solve xi_lo qp(h z) P(z) - xi_hi qp(z) P(h z) = rhs for P of degree `deg`
    qph = qp.dilate(hbar)
    rows = max(qp.degree + deg, rhs.degree) + 1
    A = np.zeros((rows, deg + 1), dtype=np.complex128)
    for m in range(deg + 1):
        A[m : m + len(qph.coeffs), m] += xi_lo * qph.coeffs
        A[m : m + len(qp.coeffs), m] -= xi_hi * hbar**m * qp.coeffs
    b = np.zeros(rows, dtype=np.complex128)
    b[: len(rhs.coeffs)] = rhs.coeffs
    out = lstsq_solve(A, b)
    return CPoly(out.x), out.residual


def solve_qminus(
    qplus: Sequence[CPoly], params: ModelParams, i: int
) -> tuple[CPoly, float]:
    """Solve node i's bilinear identity for Q^-_i by coefficient matching.

    The residual is the 2-norm of the unmatched coefficient vector; it
    vanishes exactly when the Bethe equations hold at node i.
    """
    n = len(qplus)
    if not 1 <= i <= n:
        raise InvalidArgument(f"node {i} outside 1..{n}")
    if len(params.a) != n:
        raise InvalidArgument("framing data does not match the Q-list length")
    v = qplus[i - 1].degree
    vl = qplus[i - 2].degree if i > 1 else 0
    vr = qplus[i].degree if i < n else 0
    w = len(params.a[i - 1])
    deg = w + vl + vr - v
    if deg < 0:
        raise NotRealizable(f"node {i}: Q^- degree target {deg} is negative")
    left = qplus[i - 2].dilate(params.hbar) if i > 1 else CPoly([1.0])
    right = qplus[i] if i < n else CPoly([1.0])
    rhs = poly_from_roots(params.a[i - 1]) * left * right
    return _bilinear_solve(qplus[i - 1], params.xi[i - 1], params.xi[i], params.hbar, rhs, deg)


def qq_residual(qplus: Sequence[CPoly], qminus_i: CPoly, params: ModelParams, i: int) -> float:
    """Coefficient-norm defect of node i's bilinear identity for given Q^-."""
    n = len(qplus)
    h = params.hbar
    left = qplus[i - 2].dilate(h) if i > 1 else CPoly([1.0])
    right = qplus[i] if i < n else CPoly([1.0])
    lhs = params.xi[i - 1] * (qplus[i - 1].dilate(h) * qminus_i) - params.xi[i] * (
        qplus[i - 1] * qminus_i.dilate(h)
    )
    rhs = poly_from_roots(params.a[i - 1]) * left * right
    diff = lhs - rhs
    return 0.0 if diff.is_zero() else float(np.linalg.norm(diff.coeffs))


def from_solution(q: Quiver, params: ModelParams, sol: BetheSolution) -> QQData:
    """Assemble QQData from one raw-form Bethe solution.

    Solutions must come from the raw equation normalization: those are the
    root sets for which the bilinear identities hold at the same twists.
    """
    params.check_shapes(q)
    qplus = tuple(poly_from_roots(node) for node in sol.roots)
    qminus: list[CPoly] = []
    residuals: list[float] = []
    for i in range(1, q.n + 1):
        qm, res = solve_qminus(qplus, params, i)
        qminus.append(qm)
        residuals.append(res)
    return QQData(q, params, qplus, tuple(qminus), tuple(residuals))


# -- chain and section -------------------------------------------------------


def _chain_degree(q: Quiver, i: int, j: int) -> int:
    # deg Q^-_{i..j} = v_{i-1} - v_i + sum_{t=i..j} w_t + v_{j+1}
    return q.vpad(i - 1) - q.vpad(i) + sum(q.w[i - 1 : j]) + q.vpad(j + 1)


def extend_chain(data: QQData) -> QQData:
    """Fill every Q^-_{i..j} and the section components s_1..s_{n+1}.

    Each level is the same bilinear solve as solve_qminus with the previous
    level's polynomial on the right-hand side.  Section degrees are checked
    against the combinatorial prediction before and after each solve.
    """
    q, p = data.quiver, data.params
    n = q.n
    for i in range(1, n + 1):
        if data.residuals[i - 1] > CHAIN_TOL:
            raise ChainInconsistent((i, i), f"base residual {data.residuals[i - 1]:.3e}")
    chain: dict[tuple[int, int], CPoly] = {}

    def level(i: int, j: int) -> CPoly:
        return data.qminus[i - 1] if i == j else chain[(i, j)]

    for span in range(2, n + 1):
        for i in range(1, n - span + 2):
            j = i + span - 1
            deg = _chain_degree(q, i, j)
            if deg < 0:
                raise NotRealizable(f"chain ({i},{j}): degree target {deg} is negative")
            prev = level(i, j - 1)
            rhs = poly_from_roots(p.a[j - 1]) * prev.dilate(p.hbar) * data.qp(j + 1)
            poly, res = _bilinear_solve(data.qplus[j - 1], p.xi[i - 1], p.xi[j], p.hbar, rhs, deg)
            if res > CHAIN_TOL:
                raise ChainInconsistent((i, j), f"residual {res:.3e}")
            if poly.degree != deg:
                raise ChainInconsistent((i, j), f"degree {poly.degree}, predicted {deg}")
            chain[(i, j)] = poly

    section = tuple(level(k, n) for k in range(1, n + 1)) + (data.qplus[n - 1],)
    got = tuple(s.degree for s in section)
    want = tuple(branes.section_degrees(q))
    if got != want:
        raise ChainInconsistent((1, n), f"section degrees {got}, predicted {want}")
    return QQData(q, p, data.qplus, data.qminus, data.residuals, chain, section)


# -- Backlund move -----------------------------------------------------------


def _collision(values: np.ndarray, others: np.ndarray, tol: float = 1e-6) -> bool:
    # numerically recovered multiple roots split by ~sqrt(eps); keep the
    # guard well above that so true collisions are never missed
    for x in values:
        scale = max(abs(x), 1e-30)
        if np.any(np.abs(others - x) < tol * scale):
            return True
    return False


def backlund_qq(data: QQData, i: int) -> QQData:
    """Weyl-reflection move at node i: swap Q^+_i with Q^-_i and xi_i with xi_{i+1}.

    Neighbor Q^- entries are re-solved against the new data; chain and
    section are dropped (re-run extend_chain on the result if needed).
    Applying the move twice restores the original data exactly.
    """
    q, p = data.quiver, data.params
    n = q.n
    if not 1 <= i <= n:
        raise InvalidArgument(f"node {i} outside 1..{n}")
    old_minus = data.qminus[i - 1]
    if old_minus.is_zero():
        raise Degenerate(f"node {i}: Q^- vanished, move undefined")
    c = old_minus.lead
    qplus = list(data.qplus)
    qplus[i - 1] = old_minus.monic()
    # standard pairing keeps the bilinear product invariant: Q^+ /= c, Q^- *= c
    new_minus_i = -(c * data.qplus[i - 1])

    # pairwise collisions within the new node and against its neighbors / framing
    new_roots = qplus[i - 1].roots()
    for idx in range(len(new_roots)):
        rest = np.delete(new_roots, idx)
        if _collision(new_roots[idx : idx + 1], rest):
            raise Degenerate(f"node {i}: coincident transformed roots")
    neighbors = np.concatenate(
        [
            np.asarray(qplus[i - 2].roots()) if i > 1 else np.zeros(0, complex),
            np.asarray(qplus[i].roots()) if i < n else np.zeros(0, complex),
            np.asarray(p.a[i - 1], dtype=complex),
        ]
    )
    if len(neighbors) and _collision(new_roots, neighbors):
        raise Degenerate(f"node {i}: transformed roots collide with neighbor data")

    xi = list(p.xi)
    xi[i - 1], xi[i] = xi[i], xi[i - 1]
    params = ModelParams(a=p.a, xi=tuple(xi), hbar=p.hbar)
    quiver = branes.backlund_labels(q, i)

    qminus = list(data.qminus)
    residuals = list(data.residuals)
    qminus[i - 1] = new_minus_i
    residuals[i - 1] = qq_residual(qplus, new_minus_i, params, i)
    for nb in (i - 1, i + 1):
        if 1 <= nb <= n:
            qminus[nb - 1], residuals[nb - 1] = solve_qminus(qplus, params, nb)
    return QQData(quiver, params, tuple(qplus), tuple(qminus), tuple(residuals))


# -- quantum Wronskian minors -------------------------------------------------


def _poly_det(entries: list[list[CPoly]]) -> CPoly:
    k = len(entries)
    if k == 0:
        return CPoly([1.0])
    if k == 1:
        return entries[0][0]
    out = CPoly()
    for col in range(k):
        minor = [[row[c] for c in range(k) if c != col] for row in entries[1:]]
        term = entries[0][col] * _poly_det(minor)
        out = out + (term if col % 2 == 0 else -term)
    return out


def wronskian_extract(
    section: Sequence[CPoly], params: ModelParams, k: int
) -> tuple[CPoly, complex]:
    """Recover monic Q^+_k from a Wronskian minor of the section components.

    The size n+1-k minor over the trailing components s_{k+1}..s_{n+1}
    factors as alpha * W(z) * Q^+_k(hbar^{n-k} z) with W the singularity
    product of the same size; division must be exact to 1e-8 relative.
    Conventions k = 0 and k = n+1 both return the constant 1.
    """
    n1 = len(section)
    n = n1 - 1
    if not 0 <= k <= n + 1:
        raise InvalidArgument(f"index {k} outside 0..{n + 1}")
    K = n + 1 - k
    if K == 0:
        return CPoly([1.0]), 1.0 + 0j
    h = params.hbar
    rows = []
    for ii in range(1, K + 1):
        comp = section[k + ii - 1]  # component s_{k+ii}
        xi = params.xi[k + ii - 1]
        rows.append([(xi ** (K - j)) * comp.dilate(h ** (j - 1)) for j in range(1, K + 1)])
    det = _poly_det(rows)
    w = wronskian_w(params, K - 1)
    quo, rem = det.divmod(w)
    scale = float(np.linalg.norm(det.coeffs)) if not det.is_zero() else 1.0
    rem_norm = 0.0 if rem.is_zero() else float(np.linalg.norm(rem.coeffs))
    if rem_norm > 1e-8 * max(scale, 1.0):
        raise WronskianMismatch(
            f"minor size {K}: division remainder {rem_norm:.3e} vs scale {scale:.3e}"
        )
    if quo.is_zero():
        raise WronskianMismatch(f"minor size {K}: vanishing quotient")
    undilated = quo.dilate(h ** (-(K - 1)))
    alpha = undilated.lead
    return undilated.monic(), complex(alpha)


# -- DD scale ----------------------------------------------------------------


def _xi_const(params: ModelParams, i: int, j: int) -> complex:
    # prod_{a=0}^{j-i} (xi_i - xi_{i+a+1})
    out = 1.0 + 0j
    for a in range(0, j - i + 1):
        out *= params.xi[i - 1] - params.xi[i + a]
    return complex(out)


def dd_scale(data: QQData) -> DDData:
    """Multiply the chain into DD normalization and verify the scaled relations.

    Every scaled bilinear relation (node and chain level) is asserted to
    1e-8 relative; failure means the input does not solve the system.
    """
    if data.chain is None or data.section is None:
        raise InvalidArgument("run extend_chain before dd_scale")
    q, p = data.quiver, data.params
    n = q.n
    h = p.hbar
    fpolys = tuple(f_poly(p, k) for k in range(0, n + 1))

    def f(k: int) -> CPoly:
        return fpolys[k] if k <= n else CPoly([1.0])

    dplus = tuple(data.qplus[k - 1] * f(k) for k in range(1, n + 1))
    dminus = tuple(
        data.qminus[k - 1] * f(k) * _xi_const(p, k, k) for k in range(1, n + 1)
    )
    dchain = {
        (i, j): poly * f(j) * _xi_const(p, i, j) for (i, j), poly in data.chain.items()
    }

    def dp(k: int) -> CPoly:
        if k == 0:
            return f(0)
        if k == n + 1:
            return CPoly([1.0])
        return dplus[k - 1]

    def dm(i: int, j: int) -> CPoly:
        return dminus[i - 1] if i == j else dchain[(i, j)]

    for i in range(1, n + 1):
        for j in range(i, n + 1):
            lhs = p.xi[i - 1] * (dp(j).dilate(h) * dm(i, j)) - p.xi[j] * (
                dp(j) * dm(i, j).dilate(h)
            )
            prev = dp(i - 1) if i == j else dm(i, j - 1)
            rhs = (p.xi[i - 1] - p.xi[j]) * prev.dilate(h) * dp(j + 1)
            diff = lhs - rhs
            dnorm = 0.0 if diff.is_zero() else float(np.linalg.norm(diff.coeffs))
            scale = max(float(np.linalg.norm(lhs.coeffs)) if not lhs.is_zero() else 0.0, 1.0)
            if dnorm > DD_TOL * scale:
                raise DDInconsistent(f"scaled relation ({i},{j}): defect {dnorm:.3e}")
    return DDData(q, p, dplus, dminus, dchain, fpolys)


# -- determinant reconstruction ----------------------------------------------


def reconstruct_polys(
    g: CPoly, gammas: Sequence[complex], seeds: Sequence[CPoly], hbar: complex
) -> tuple[CPoly, ...]:
    """Complete f_1..f_{k-1} to a family whose dilation determinant equals g.

    The determinant with entries gamma_i^j f_i(hbar^j z) is linear in the
    last polynomial once the others are fixed; its coefficients are solved
    by matching against g.
    """
    k = len(gammas)
    if k < 1:
        raise InvalidArgument("need at least one gamma")
    if len(seeds) != k - 1:
        raise InvalidArgument(f"expected {k - 1} seed polynomials, got {len(seeds)}")
    gam = [complex(x) for x in gammas]
    if any(x == 0 for x in gam):
        raise InvalidArgument("gammas must be nonzero")
    for f in seeds:
        if f.is_zero() or f.coeff(0) == 0:
            raise InvalidArgument("seed polynomials must not vanish at 0")
    # gamma_j on the hbar ladder of gamma_k makes the solve singular
    ladder_len = max(64, 2 * (g.degree + k))
    for j in range(k - 1):
        step = gam[j] / gam[k - 1]
        for m in range(ladder_len + 1):
            target = hbar**m
            if abs(step - target) <= 1e-8 * max(abs(target), 1e-30):
                raise IllConditioned(
                    f"gamma_{j + 1} = hbar^{m} gamma_{k} within tolerance"
                )
    if k == 1:
        return (g,)

    deg = g.degree - sum(f.degree for f in seeds)
    if deg < 0:
        raise InvalidArgument("degree of g too small for the given seeds")
    # cofactors along the last row: minors of the seed block
    minors = []
    for col in range(k):
        entries = [
            [(gam[i] ** j) * seeds[i].dilate(hbar**j) for j in range(k) if j != col]
            for i in range(k - 1)
        ]
        minors.append(_poly_det(entries))
    rows = max(g.degree, deg + max(m.degree for m in minors)) + 1
    A = np.zeros((rows, deg + 1), dtype=np.complex128)
    for m in range(deg + 1):
        for col in range(k):
            sign = -1.0 if (k - 1 + col) % 2 else 1.0
            factor = sign * gam[k - 1] ** col * hbar ** (col * m)
            cf = minors[col].coeffs
            A[m : m + len(cf), m] += factor * cf
    b = np.zeros(rows, dtype=np.complex128)
    b[: len(g.coeffs)] = g.coeffs
    out = lstsq_solve(A, b)
    if out.rank_deficient:
        raise IllConditioned("reconstruction system is rank deficient")
    return tuple(seeds) + (CPoly(out.x),)
