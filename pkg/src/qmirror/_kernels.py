"""Hot numerical kernels for the Bethe solver.

Every equation system is flattened to a factor table: equation e is
prod_f (alpha_f*s_e - beta_f*y_f)^{sign_f} = K_e, where y_f is another
unknown (partner >= 0) or a constant (partner = -1-c).  The residual is
the principal-branch log of that ratio, reduced mod 2*pi*i, and the
Jacobian in log-root coordinates theta (s = exp(theta)) is analytic.

The kernels are compiled with numba when available; set QMIRROR_NO_NUMBA
to force the plain numpy build of the same functions (identical bodies,
so both backends agree bit-for-bit on the math they run).
"""

import os

import numpy as np

_TWO_PI = 2.0 * np.pi
_POLE_GUARD = 1e-10
_COLLIDE_GUARD = 1e-10

# status codes shared by the kernels and the driver
OK = 0
SINGULAR = 1
POLE = 2
COLLISION = 3
STALL = 4
MAXITER = 5
OVERFLOW = 6


def _lu_solve_body(a, b):
    """Partial-pivot LU solve; returns (x, ok) instead of raising."""
    n = a.shape[0]
    lu = a.copy()
    x = b.copy()
    for col in range(n):
        piv = col
        big = abs(lu[col, col])
        for row in range(col + 1, n):
            m = abs(lu[row, col])
            if m > big:
                big = m
                piv = row
        if big < 1e-300:
            return x, False
        if piv != col:
            for k in range(n):
                tmp = lu[col, k]
                lu[col, k] = lu[piv, k]
                lu[piv, k] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        for row in range(col + 1, n):
            f = lu[row, col] / lu[col, col]
            lu[row, col] = f
            for k in range(col + 1, n):
                lu[row, k] -= f * lu[col, k]
            x[row] -= f * x[col]
    for col in range(n - 1, -1, -1):
        x[col] /= lu[col, col]
        for row in range(col):
            x[row] -= lu[row, col] * x[col]
    return x, True


def _eval_system_body(theta, fac_eq, fac_alpha, fac_beta, fac_partner,
                      fac_sign, consts, logk, node_start, node_stop,
                      want_jac):
    """Residual (and optionally Jacobian) at log-roots theta."""
    n_eq = logk.shape[0]
    n_un = theta.shape[0]
    s = np.exp(theta)
    r = np.zeros(n_eq, dtype=np.complex128)
    jac = np.zeros((n_eq, n_un), dtype=np.complex128)
    for i in range(n_un):
        m = abs(s[i])
        if not (m == m) or m > 1e150 or m < 1e-150:
            return r, jac, OVERFLOW
    # root-collision guard within each node
    for m in range(node_start.shape[0]):
        for i in range(node_start[m], node_stop[m]):
            for j in range(i + 1, node_stop[m]):
                ai = abs(s[i])
                aj = abs(s[j])
                big = ai if ai > aj else aj
                if abs(s[i] - s[j]) < _COLLIDE_GUARD * big:
                    return r, jac, COLLISION
    for f in range(fac_eq.shape[0]):
        e = fac_eq[f]
        p = fac_partner[f]
        if p >= 0:
            y = s[p]
        else:
            y = consts[-1 - p]
        u = fac_alpha[f] * s[e]
        w = fac_beta[f] * y
        val = u - w
        scale = abs(u) + abs(w)
        if abs(val) < _POLE_GUARD * scale + 1e-300:
            return r, jac, POLE
        sg = fac_sign[f]
        r[e] += sg * np.log(val)
        if want_jac:
            jac[e, e] += sg * u / val
            if p >= 0:
                jac[e, p] -= sg * w / val
    for e in range(n_eq):
        z = r[e] - logk[e]
        im = z.imag - _TWO_PI * np.round(z.imag / _TWO_PI)
        r[e] = complex(z.real, im)
    return r, jac, OK


def _newton_body(theta0, fac_eq, fac_alpha, fac_beta, fac_partner,
                 fac_sign, consts, logk, node_start, node_stop,
                 newton_tol, max_iter):
    """Damped Newton on the log residual; halving line search, 30 tries."""
    theta = theta0.copy()
    r, jac, status = _eval_system(theta, fac_eq, fac_alpha, fac_beta,
                                  fac_partner, fac_sign, consts, logk,
                                  node_start, node_stop, True)
    if status != OK:
        return theta, status, np.inf
    norm = np.max(np.abs(r))
    for _ in range(max_iter):
        if norm < newton_tol:
            return theta, OK, norm
        step, ok = _lu_solve(jac, -r)
        if not ok:
            return theta, SINGULAR, norm
        t = 1.0
        accepted = False
        for _ in range(30):
            trial = theta + t * step
            r_new, jac_new, st = _eval_system(
                trial, fac_eq, fac_alpha, fac_beta, fac_partner,
                fac_sign, consts, logk, node_start, node_stop, True)
            if st == OK:
                norm_new = np.max(np.abs(r_new))
                if norm_new < norm:
                    theta = trial
                    r = r_new
                    jac = jac_new
                    norm = norm_new
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return theta, STALL, norm
    if norm < newton_tol:
        return theta, OK, norm
    return theta, MAXITER, norm


def _ham_sums_body(W, p):
    """Momentum-weighted subset sums for the closed-form tRS Hamiltonians.

    Builds g[S] = prod_{i in S, j not in S} W[i,j] * prod_{i in S} p[i]
    by inserting one particle per level: adding particle t to S
    contributes the crossings (t, j) to the earlier outsiders, keeping
    it out contributes (i, t) from the earlier insiders.  Division-free,
    so legitimately vanishing weights (x_i = hbar*x_j) stay exact zeros.
    O(2^L * L) time, one complex array of size 2^L.
    out[k] collects the sum over all |S| = k.
    """
    L = W.shape[0]
    total = 1 << L
    g = np.zeros(total, dtype=np.complex128)
    g[0] = 1.0 + 0.0j
    for t in range(L):
        half = 1 << t
        for mask in range(half, 2 * half):
            base = mask - half
            f = p[t]
            for j in range(t):
                if not (base >> j) & 1:
                    f *= W[t, j]
            g[mask] = g[base] * f
        for mask in range(half):
            f = 1.0 + 0.0j
            for i in range(t):
                if (mask >> i) & 1:
                    f *= W[i, t]
            g[mask] = g[mask] * f
    out = np.zeros(L + 1, dtype=np.complex128)
    for mask in range(total):
        k = 0
        mm = mask
        while mm:
            mm &= mm - 1
            k += 1
        out[k] += g[mask]
    return out


def _want_numba() -> bool:
    if os.environ.get("QMIRROR_NO_NUMBA"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


if _want_numba():
    import numba

    _jit = numba.njit(cache=True)
    _lu_solve = _jit(_lu_solve_body)
    _eval_system = _jit(_eval_system_body)
    _newton = _jit(_newton_body)
    _ham_sums = _jit(_ham_sums_body)
    BACKEND = "numba"
else:
    _lu_solve = _lu_solve_body
    _eval_system = _eval_system_body
    _newton = _newton_body
    _ham_sums = _ham_sums_body
    BACKEND = "numpy"


def eval_system(theta, enc, want_jac=False):
    """Python-facing wrapper; enc is the tuple of encoding arrays."""
    return _eval_system(np.asarray(theta, dtype=np.complex128), *enc,
                        want_jac)


def newton(theta0, enc, newton_tol=1e-12, max_iter=60):
    return _newton(np.asarray(theta0, dtype=np.complex128), *enc,
                   newton_tol, max_iter)


def ham_sums(W, p):
    return _ham_sums(np.asarray(W, dtype=np.complex128),
                     np.asarray(p, dtype=np.complex128))
