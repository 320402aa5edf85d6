"""Bethe equation systems (finite A_r chains and the toroidal/ADHM family)
and a deterministic multi-start Newton solver for their full solution sets.

Systems are stored as factor tables consumed by the kernels in _kernels;
each equation is prod_f (alpha_f*s - beta_f*y_f)^{sign_f} = K_e with y_f
either another root or a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import (
    InvalidArgument,
    QmirrorError,
    Quiver,
    Unsupported,
    generic_complex,
    rng_from_seed,
)


class PoleEncountered(QmirrorError):
    """A Bethe factor was evaluated at (or too close to) its zero."""


class EmptyResult(QmirrorError):
    """The multi-start search found no solutions at all."""


@dataclass(frozen=True)
class ModelParams:
    """Equivariant parameters a (per node, |a_i| = w_i), diagonal twists
    xi_1..xi_{n+1} and the loop weight hbar."""

    a: tuple[tuple[complex, ...], ...]
    xi: tuple[complex, ...]
    hbar: complex

    def __post_init__(self):
        object.__setattr__(
            self, "a", tuple(tuple(complex(x) for x in row) for row in self.a))
        object.__setattr__(self, "xi", tuple(complex(x) for x in self.xi))
        object.__setattr__(self, "hbar", complex(self.hbar))

    def zeta(self, i: int) -> complex:
        """Twist ratio xi_i / xi_{i+1} entering the node-i equation."""
        return self.xi[i - 1] / self.xi[i]

    def check_shapes(self, q: Quiver) -> None:
        if len(self.a) != q.n or len(self.xi) != q.n + 1:
            raise InvalidArgument("parameter shapes do not match quiver")
        for i in range(q.n):
            if len(self.a[i]) != q.w[i]:
                raise InvalidArgument(
                    f"node {i + 1} needs {q.w[i]} framing parameters")

    def check_generic(self, window: int = 12, tol: float = 1e-8) -> None:
        """Nondegeneracy at working precision: no two parameters on
        neighboring nodes differ by an hbar power, and no twist ratio
        is an hbar power.  Zero entries (truncations) are skipped."""
        h = self.hbar
        powers = h ** np.arange(-window, window + 1)
        for i in range(len(self.a) - 1):
            for x in self.a[i]:
                for y in self.a[i + 1]:
                    if x == 0 or y == 0:
                        continue
                    if np.min(np.abs(x - powers * y)) < tol * abs(x):
                        raise InvalidArgument(
                            f"parameters on nodes {i + 1},{i + 2} are "
                            "hbar-resonant")
        for i in range(len(self.xi)):
            for j in range(i + 1, len(self.xi)):
                if self.xi[i] == 0 or self.xi[j] == 0:
                    continue
                ratio = self.xi[i] / self.xi[j]
                if np.min(np.abs(ratio - powers)) < tol * abs(ratio):
                    raise InvalidArgument(
                        f"twists {i + 1},{j + 1} differ by an hbar power")


@dataclass
class BetheSystem:
    """A factor-encoded Bethe system plus the metadata to interpret it."""

    kind: str                      # "finite_Ar" or "toroidal"
    quiver: Quiver | None
    params: ModelParams | None
    node_sizes: tuple[int, ...]
    kvals: np.ndarray              # complex K_e per equation
    enc: tuple                     # kernel argument pack
    form: str = "calibrated"
    meta: dict = field(default_factory=dict)

    @property
    def n_unknowns(self) -> int:
        return int(sum(self.node_sizes))

    def node_slices(self) -> list[slice]:
        out, start = [], 0
        for sz in self.node_sizes:
            out.append(slice(start, start + sz))
            start += sz
        return out


class _Encoder:
    """Accumulates factors and packs the kernel arrays."""

    def __init__(self):
        self.eq, self.alpha, self.beta = [], [], []
        self.partner, self.sign = [], []
        self.consts = []

    def add(self, e, alpha, beta, partner, sign):
        """partner: ('u', unknown index) or ('c', constant value)."""
        kind, val = partner
        if kind == "u":
            idx = int(val)
        else:
            idx = -1 - len(self.consts)
            self.consts.append(complex(val))
        self.eq.append(e)
        self.alpha.append(complex(alpha))
        self.beta.append(complex(beta))
        self.partner.append(idx)
        self.sign.append(sign)

    def pack(self, kvals, node_sizes):
        starts, stops, pos = [], [], 0
        for sz in node_sizes:
            starts.append(pos)
            stops.append(pos + sz)
            pos += sz
        kv = np.asarray(kvals, dtype=np.complex128)
        return (
            np.asarray(self.eq, dtype=np.int64),
            np.asarray(self.alpha, dtype=np.complex128),
            np.asarray(self.beta, dtype=np.complex128),
            np.asarray(self.partner, dtype=np.int64),
            np.asarray(self.sign, dtype=np.int64),
            np.asarray(self.consts if self.consts else [0j],
                       dtype=np.complex128),
            np.log(kv),
            np.asarray(starts, dtype=np.int64),
            np.asarray(stops, dtype=np.int64),
        )


def build_system(q: Quiver, p: ModelParams, form: str = "calibrated") -> BetheSystem:
    """Bethe system of the framed A_n quiver: at each root s of node i,

        prod_{k!=alpha} (hbar*s - s_{i,k})/(s - hbar*s_{i,k})
      * prod_b (s - hbar*a_{i,b})/(s - a_{i,b})
      * prod_j (s - s_{i-1,j})/(hbar*s - s_{i-1,j})
      * prod_c (s - hbar*s_{i+1,c})/(s - s_{i+1,c})  =  K_i

    with K_i = xi_i/xi_{i+1} in the calibrated form (the normalization in
    which the one-node two-flavor system is exactly
    (xi_2/xi_1)(s-hbar*a_1)(s-hbar*a_2)/((s-a_1)(s-a_2)) = 1), and
    K_i = (xi_{i+1}/xi_i)*hbar^{w_i+v_{i+1}-v_i} in the raw form that
    plugs directly into the QQ-system at the same twists.
    """
    if form not in ("raw", "calibrated"):
        raise InvalidArgument(f"unknown form {form!r}")
    p.check_shapes(q)
    p.check_generic()
    n, h = q.n, p.hbar
    off = np.cumsum([0] + list(q.v))
    enc = _Encoder()
    kvals = []
    for i in range(1, n + 1):
        vi = q.v[i - 1]
        if form == "calibrated":
            k_node = p.xi[i - 1] / p.xi[i]
        else:
            k_node = (p.xi[i] / p.xi[i - 1]) * h ** (
                q.w[i - 1] + q.vpad(i + 1) - vi)
        for alpha in range(vi):
            e = off[i - 1] + alpha
            kvals.append(k_node)
            for k in range(vi):
                if k == alpha:
                    continue
                u = ("u", off[i - 1] + k)
                enc.add(e, h, 1, u, 1)
                enc.add(e, 1, h, u, -1)
            for a_b in p.a[i - 1]:
                enc.add(e, 1, h, ("c", a_b), 1)
                enc.add(e, 1, 1, ("c", a_b), -1)
            if i >= 2:
                for j in range(q.v[i - 2]):
                    u = ("u", off[i - 2] + j)
                    enc.add(e, 1, 1, u, 1)
                    enc.add(e, h, 1, u, -1)
            if i <= n - 1:
                for c in range(q.v[i]):
                    u = ("u", off[i] + c)
                    enc.add(e, 1, h, u, 1)
                    enc.add(e, 1, 1, u, -1)
    kv = np.asarray(kvals, dtype=np.complex128)
    return BetheSystem(
        kind="finite_Ar", quiver=q, params=p, node_sizes=tuple(q.v),
        kvals=kv, enc=enc.pack(kv, tuple(q.v)), form=form)


def transport_twists(q: Quiver, xi, hbar) -> tuple[complex, ...]:
    """Twists at which the raw system has the calibrated system's
    solutions: xi~_i = hbar^{d_i}/xi_i with d_1 = 0 and
    d_{i+1} = d_i + v_i - w_i - v_{i+1}."""
    xi = [complex(x) for x in xi]
    if len(xi) != q.n + 1:
        raise InvalidArgument("need n+1 twists")
    d = [0]
    for i in range(1, q.n + 1):
        d.append(d[-1] + q.v[i - 1] - q.w[i - 1] - q.vpad(i + 1))
    return tuple(complex(hbar) ** d[i] / xi[i] for i in range(q.n + 1))


def build_adhm(k: int, N: int, a, xi, t, hbar) -> BetheSystem:
    """Bethe system on the Hilbert-scheme/ADHM side: for each root,

        prod_{l<N} (s-a_l)/(hbar^{-1}s-a_l)
      * prod_{b!=alpha} (t*s-s_b)/(t^{-1}s-s_b)
                      * (hbar^{-1}s-s_b)/(hbar*s-s_b)
                      * (t^{-1}hbar*s-s_b)/(t*hbar^{-1}s-s_b)  =  xi^{-1}
    """
    if k < 1 or N < 1:
        raise InvalidArgument("need k >= 1 and N >= 1")
    a = [complex(x) for x in a]
    if len(a) != N:
        raise InvalidArgument(f"need {N} framing parameters")
    t, h, xi = complex(t), complex(hbar), complex(xi)
    enc = _Encoder()
    kvals = []
    for alpha in range(k):
        e = alpha
        kvals.append(1.0 / xi)
        for a_l in a:
            enc.add(e, 1, 1, ("c", a_l), 1)
            enc.add(e, 1 / h, 1, ("c", a_l), -1)
        for b in range(k):
            if b == alpha:
                continue
            u = ("u", b)
            enc.add(e, t, 1, u, 1)
            enc.add(e, 1 / t, 1, u, -1)
            enc.add(e, 1 / h, 1, u, 1)
            enc.add(e, h, 1, u, -1)
            enc.add(e, h / t, 1, u, 1)
            enc.add(e, t / h, 1, u, -1)
    kv = np.asarray(kvals, dtype=np.complex128)
    return BetheSystem(
        kind="toroidal", quiver=None, params=None, node_sizes=(k,),
        kvals=kv, enc=enc.pack(kv, (k,)),
        meta={"k": k, "N": N, "a": tuple(a), "xi_single": xi, "t": t,
              "hbar": h})


def build_cyclic(N: int, k: int, hbar, seam, g, kappa) -> BetheSystem:
    """Cyclic chain of N nodes with k roots each: the rank-N periodic
    analogue of the ADHM system.  At a root sigma of node i,

        [i=0 only: (sigma-g)/(hbar^{-1}sigma-g)]
      * prod_{b!=alpha} (hbar^{-1}sigma-sigma_b)/(hbar*sigma-sigma_b)
      * prod_j (hbar*sigma-L_j)/(sigma-L_j)
      * prod_c (sigma-R_c)/(sigma-hbar*R_c)  =  kappa_i

    where L runs over node i-1 and R over node i+1; crossing the seam
    multiplies the neighbor roots by `seam` (L) or its inverse (R).
    For N=1 both neighbor products hit the node itself and the b=alpha
    factors cancel in closed form, leaving the ADHM equation up to a
    constant hbar power in the twist.
    """
    if N < 1 or k < 1:
        raise InvalidArgument("need N >= 1 and k >= 1")
    h, lam, g = complex(hbar), complex(seam), complex(g)
    kappa = [complex(x) for x in kappa]
    if len(kappa) != N:
        raise InvalidArgument(f"need {N} twists")
    enc = _Encoder()
    kvals = []
    for i in range(N):
        left = (i - 1) % N
        right = (i + 1) % N
        lmul = lam if i == 0 else 1.0
        rmul = 1.0 / lam if i == N - 1 else 1.0
        for alpha in range(k):
            e = i * k + alpha
            kvals.append(kappa[i])
            if i == 0:
                enc.add(e, 1, 1, ("c", g), 1)
                enc.add(e, 1 / h, 1, ("c", g), -1)
            for b in range(k):
                if b != alpha:
                    u = ("u", i * k + b)
                    enc.add(e, 1 / h, 1, u, 1)
                    enc.add(e, h, 1, u, -1)
                uL = ("u", left * k + b)
                enc.add(e, h, lmul, uL, 1)
                enc.add(e, 1, lmul, uL, -1)
                uR = ("u", right * k + b)
                enc.add(e, 1, rmul, uR, 1)
                enc.add(e, 1, h * rmul, uR, -1)
    kv = np.asarray(kvals, dtype=np.complex128)
    return BetheSystem(
        kind="toroidal", quiver=None, params=None, node_sizes=(k,) * N,
        kvals=kv, enc=enc.pack(kv, (k,) * N),
        meta={"k": k, "N": N, "seam": lam, "g": g, "kappa": tuple(kappa),
              "hbar": h})


# -- residual and solving -----------------------------------------------------


@dataclass(frozen=True)
class BetheSolution:
    roots: tuple[tuple[complex, ...], ...]
    residual: float
    canonical: bool = True

    def flat(self) -> np.ndarray:
        return np.asarray([z for node in self.roots for z in node],
                          dtype=np.complex128)


@dataclass(frozen=True)
class SolveOptions:
    seed: int = 0
    starts: int = 200
    newton_tol: float = 1e-12
    max_iter: int = 60
    dedup_tol: float = 1e-7


def _flatten(sys: BetheSystem, roots) -> np.ndarray:
    flat = [complex(z) for node in roots for z in node]
    if len(flat) != sys.n_unknowns:
        raise InvalidArgument(
            f"expected {sys.n_unknowns} roots, got {len(flat)}")
    sizes = [len(node) for node in roots]
    if tuple(sizes) != tuple(sys.node_sizes):
        raise InvalidArgument(
            f"per-node root counts {sizes} do not match {sys.node_sizes}")
    return np.asarray(flat, dtype=np.complex128)


def _describe_pole(sys: BetheSystem, s: np.ndarray) -> str:
    fac_eq, alpha, beta, partner, sign, consts = sys.enc[:6]
    for f in range(len(fac_eq)):
        p = partner[f]
        y = s[p] if p >= 0 else consts[-1 - p]
        u, w = alpha[f] * s[fac_eq[f]], beta[f] * y
        if abs(u - w) < 1e-10 * (abs(u) + abs(w)) + 1e-300:
            side = "root" if p >= 0 else "parameter"
            return (f"equation {fac_eq[f]}: factor "
                    f"({alpha[f]:g})*s - ({beta[f]:g})*y vanished "
                    f"(y is {side} {p if p >= 0 else -1 - p})")
    return "factor vanished"


def residual(sys: BetheSystem, roots) -> np.ndarray:
    """Per-equation principal log of the Bethe ratio, reduced mod 2*pi*i."""
    s = _flatten(sys, roots)
    bad = np.isclose(s, 0.0, atol=0.0)
    if bad.any():
        raise PoleEncountered("zero root is outside the torus chart")
    r, _, status = _kernels.eval_system(np.log(s), sys.enc, want_jac=False)
    if status == _kernels.POLE:
        raise PoleEncountered(_describe_pole(sys, s))
    if status == _kernels.COLLISION:
        raise PoleEncountered("two roots at the same node collide")
    return r


def canonicalize(sys: BetheSystem, roots) -> tuple[tuple[complex, ...], ...]:
    """Sort roots lexicographically by (re, im) within each node."""
    out = []
    for node in roots:
        arr = np.asarray(node, dtype=np.complex128)
        order = np.lexsort((arr.imag, arr.real))
        out.append(tuple(arr[order]))
    return tuple(out)


def _split(sys: BetheSystem, flat: np.ndarray):
    return tuple(tuple(flat[sl]) for sl in sys.node_slices())


def _cleared_ok(sys: BetheSystem, s: np.ndarray, tol: float) -> bool:
    """Accept only if the cleared-denominator polynomial form of every
    equation vanishes; guards against branch artifacts in the log form."""
    fac_eq, alpha, beta, partner, sign, consts = sys.enc[:6]
    n_eq = len(sys.kvals)
    plus = np.ones(n_eq, dtype=np.complex128)
    minus = np.ones(n_eq, dtype=np.complex128)
    for f in range(len(fac_eq)):
        p = partner[f]
        y = s[p] if p >= 0 else consts[-1 - p]
        val = alpha[f] * s[fac_eq[f]] - beta[f] * y
        if sign[f] > 0:
            plus[fac_eq[f]] *= val
        else:
            minus[fac_eq[f]] *= val
    lhs = plus - sys.kvals * minus
    scale = np.abs(plus) + np.abs(sys.kvals * minus)
    return bool(np.all(np.abs(lhs) <= tol * scale))


def _starts_iter(sys: BetheSystem, rng, count):
    """Initial guesses: half structured around parameter times small
    integer powers of the multiplicative weights, half free-floating."""
    consts = sys.enc[5]
    pool = np.asarray([c for c in consts if abs(c) > 1e-12] or [1.0 + 0j])
    h = complex(sys.params.hbar) if sys.params is not None else \
        complex(sys.meta["hbar"])
    second = complex(sys.meta.get("t", sys.meta.get("seam", h))) \
        if sys.meta else h
    vmax = max(sys.node_sizes)
    n = sys.n_unknowns
    scale = float(np.exp(np.mean(np.log(np.abs(pool)))))
    for j in range(count):
        if j % 2 == 0:
            base = pool[rng.integers(0, len(pool), size=n)]
            e1 = rng.integers(-1, vmax + 2, size=n)
            jitter = np.exp(0.3 * (rng.standard_normal(n)
                                   + 1j * rng.standard_normal(n)))
            guess = base * h ** e1 * jitter
            if j % 4 == 2:
                guess = guess * second ** rng.integers(-1, vmax + 2, size=n)
            yield guess
        else:
            yield generic_complex(rng, n) * scale * \
                np.exp(rng.uniform(-1.2, 1.2))


def solve(sys: BetheSystem, opts: SolveOptions | None = None, **kw) -> list[BetheSolution]:
    """Multi-start damped Newton in log-root coordinates.

    Converged points must also satisfy the cleared-denominator form;
    solutions are canonicalized, deduplicated at dedup_tol (relative) and
    returned sorted.  Deterministic for a fixed seed.
    """
    if opts is None:
        opts = SolveOptions(**kw)
    elif kw:
        raise InvalidArgument("pass either opts or keyword options")
    if opts.starts < 1:
        raise InvalidArgument("need at least one start")
    rng = rng_from_seed(opts.seed)
    cleared_tol = max(1e4 * opts.newton_tol, 1e-9)
    found: list[np.ndarray] = []
    res: list[float] = []
    for s0 in _starts_iter(sys, rng, opts.starts):
        theta, status, rnorm = _kernels.newton(
            np.log(s0), sys.enc, opts.newton_tol, opts.max_iter)
        if status != _kernels.OK:
            continue
        s = np.exp(theta)
        if not _cleared_ok(sys, s, cleared_tol):
            continue
        if _node_collision(sys, s, 1e-8):
            continue
        flat = np.concatenate(
            [np.asarray(node) for node in canonicalize(sys, _split(sys, s))])
        _merge(found, res, flat, rnorm, opts.dedup_tol)
    if not found:
        raise EmptyResult("no Bethe solutions found; raise starts?")
    order = sorted(range(len(found)),
                   key=lambda i: tuple(x for z in found[i]
                                       for x in (z.real, z.imag)))
    return [BetheSolution(roots=_split(sys, found[i]), residual=res[i])
            for i in order]


def _node_collision(sys: BetheSystem, s: np.ndarray, tol: float) -> bool:
    for sl in sys.node_slices():
        node = s[sl]
        for i in range(len(node)):
            for j in range(i + 1, len(node)):
                if abs(node[i] - node[j]) < tol * max(abs(node[i]),
                                                      abs(node[j])):
                    return True
    return False


def _merge(found, res, flat, rnorm, dedup_tol):
    for i, other in enumerate(found):
        scale = max(np.max(np.abs(other)), np.max(np.abs(flat)), 1e-300)
        if np.max(np.abs(other - flat)) <= dedup_tol * scale:
            if rnorm < res[i]:
                found[i], res[i] = flat, rnorm
            return
    found.append(flat)
    res.append(rnorm)


# -- closed-form census targets ----------------------------------------------


def _npartitions(k: int) -> int:
    table = [1] + [0] * k
    for part in range(1, k + 1):
        for total in range(part, k + 1):
            table[total] += table[total - part]
    return table[k]


def expected_count(family: str, *args: int) -> int:
    """Closed-form solution counts: full_flag(n) -> n!, grassmannian(k,n)
    -> C(n,k), hilb(k) -> partitions of k, adhm(N,k) -> N-tuples of
    partitions of total size k."""
    if family == "full_flag" and len(args) == 1:
        return math.factorial(args[0])
    if family == "grassmannian" and len(args) == 2:
        k, n = args
        return math.comb(n, k)
    if family == "hilb" and len(args) == 1:
        return _npartitions(args[0])
    if family == "adhm" and len(args) == 2:
        N, k = args
        series = [1] + [0] * k
        for _ in range(N):
            nxt = [0] * (k + 1)
            for tot in range(k + 1):
                for j in range(tot + 1):
                    nxt[tot] += series[tot - j] * _npartitions(j)
            series = nxt
        return series[k]
    raise Unsupported(f"no closed-form count for {family}{args}")
