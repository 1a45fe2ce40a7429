"""Variational denoisers (TV / TGV) with L2, Huber and Poisson-type data terms.

All solvers treat channels independently and work in float64. Every
hyperparameter may be a scalar or a 1-D array of length ``K``; in the latter
case the solve is batched and the result has shape ``(K, H, W, C)``. A batched
solve computes each member exactly as the corresponding single solve would.

Discrete gradient: forward differences with replicate (Neumann) boundary,
divergence is its negative adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import fft as sfft

__all__ = [
    "DATA_TERMS",
    "PRIORS",
    "ROLES",
    "HyperVector",
    "active_mask",
    "slot_roles",
    "prox_data",
    "data_objective",
    "grad",
    "grad_adjoint",
    "total_variation",
    "denoise_tv_l2",
    "denoise_tv_admm",
    "denoise_tv_huber",
    "denoise_tgv",
    "tgv_weights",
    "denoise",
]

DATA_TERMS = ("l2", "huber", "nll_poisson", "nll_pg")
PRIORS = ("tv", "tgv")
ROLES = ("delta", "lambda", "gamma")
L_MAX = 3
PAD = 0.0

TV_L2_MAX_ITER = 100
TV_L2_EPS = 1e-3
TV_ADMM_ITER = 100
RHO_TV = 2.0
RHO_DATA = 5.0
TGV_ITER = 120
# squared norm bound of the TGV operator [[grad, -I], [0, symgrad]]
TGV_OPNORM_SQ = 12.0


def _check(d: str, r: str | None = None):
    if d not in DATA_TERMS:
        raise ValueError(f"unknown data term {d!r}")
    if r is not None and r not in PRIORS:
        raise ValueError(f"unknown prior {r!r}")


def active_mask(d: str, r: str) -> np.ndarray:
    """Active slots ``(delta, lambda, gamma)`` for configuration ``(d, r)``."""
    _check(d, r)
    return np.array([d == "huber", True, r == "tgv"])


def slot_roles(d: str, r: str) -> tuple[str, ...]:
    """Role tag per slot; inactive slots are ``"pad"``."""
    mask = active_mask(d, r)
    return tuple(role if m else "pad" for role, m in zip(ROLES, mask))


@dataclass(frozen=True)
class HyperVector:
    """Padded ``(delta, lambda, gamma)`` vector.

    In the ``learning`` domain the lambda slot holds ``log10(lambda)``; in the
    ``solver`` domain it holds raw lambda. Inactive slots hold 0.
    """

    slots: tuple[float, float, float]
    mask: tuple[bool, bool, bool]
    domain: str = "solver"

    def __post_init__(self):
        if self.domain not in ("learning", "solver"):
            raise ValueError(f"unknown domain {self.domain!r}")
        slots = tuple(float(v) if m else PAD for v, m in zip(self.slots, self.mask))
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "mask", tuple(bool(m) for m in self.mask))
        if self.domain == "solver":
            for v, m, name in zip(slots, self.mask, ROLES):
                if m and not v > 0:
                    raise ValueError(f"{name} must be positive in solver domain, got {v}")

    @classmethod
    def for_config(cls, d: str, r: str, delta=None, lam=None, gamma=None,
                   domain: str = "solver") -> "HyperVector":
        mask = active_mask(d, r)
        vals = [delta if delta is not None else PAD, lam, gamma if gamma is not None else PAD]
        return cls(tuple(vals), tuple(mask), domain)

    @property
    def delta(self):
        return self.slots[0]

    @property
    def lam(self):
        return self.slots[1]

    @property
    def gamma(self):
        return self.slots[2]

    def to_solver(self) -> "HyperVector":
        if self.domain == "solver":
            return self
        s = list(self.slots)
        s[1] = 10.0 ** s[1]
        return HyperVector(tuple(s), self.mask, "solver")

    def to_learning(self) -> "HyperVector":
        if self.domain == "learning":
            return self
        s = list(self.slots)
        s[1] = math.log10(s[1])
        return HyperVector(tuple(s), self.mask, "learning")

    def as_array(self) -> np.ndarray:
        return np.array(self.slots, dtype=np.float64)


# ------------------------------------------------------------ prox operators

def _pos(name, value):
    if value is None or np.any(np.asarray(value) <= 0):
        raise ValueError(f"{name} must be positive")


def prox_data(d: str, v, y, rho, delta=None, meta: dict | None = None):
    """Elementwise ``argmin_u D_d(u, y) + rho/2 (u - v)^2``.

    Data terms: ``l2`` ``(u-y)^2``; ``huber`` the C1 Huber penalty of ``u-y``
    equal to ``r^2`` for ``|r| <= delta`` and ``2 delta |r| - delta^2``
    beyond; ``nll_poisson`` ``p_max (u - y ln u)`` on ``u > 0`` (negative
    observations are treated as 0); ``nll_pg`` the weighted least squares
    surrogate ``(u-y)^2 / (2 var)`` with ``var = max(y,0)/p_max + sigma_read^2``.
    ``meta`` carries ``p_max`` (and ``sigma_read``) for the likelihood terms.
    """
    _check(d)
    _pos("rho", rho)
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if d == "l2":
        return (2.0 * y + rho * v) / (2.0 + rho)
    if d == "huber":
        _pos("delta", delta)
        r0 = v - y
        quad = rho * r0 / (2.0 + rho)
        lin = r0 - np.sign(r0) * (2.0 * delta / rho)
        return y + np.where(np.abs(quad) <= delta, quad, lin)
    if meta is None:
        raise ValueError(f"{d} data term needs p_max metadata")
    p_max = float(meta["p_max"])
    _pos("p_max", p_max)
    if d == "nll_poisson":
        yc = np.maximum(y, 0.0)
        b = rho * v - p_max
        return (b + np.sqrt(b * b + 4.0 * rho * p_max * yc)) / (2.0 * rho)
    sr = float(meta.get("sigma_read", 0.0))
    var = np.maximum(y, 0.0) / p_max + sr * sr
    var = np.maximum(var, 1e-12)
    return (y + rho * var * v) / (1.0 + rho * var)


def data_objective(d: str, u, y, delta=None, meta: dict | None = None):
    """Pointwise data penalty ``D_d(u, y)`` (used for prox verification)."""
    _check(d)
    u = np.asarray(u, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if d == "l2":
        return (u - y) ** 2
    if d == "huber":
        r = np.abs(u - y)
        return np.where(r <= delta, r * r, 2.0 * delta * r - delta * delta)
    p_max = float(meta["p_max"])
    if d == "nll_poisson":
        yc = np.maximum(y, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logu = np.where(u > 0, np.log(np.where(u > 0, u, 1.0)), -np.inf)
            val = np.where(yc > 0, p_max * (u - yc * logu), p_max * u)
        return np.where(u >= 0, val, np.inf)
    sr = float(meta.get("sigma_read", 0.0))
    var = np.maximum(np.maximum(y, 0.0) / p_max + sr * sr, 1e-12)
    return (u - y) ** 2 / (2.0 * var)


# ------------------------------------------------------ difference operators
# spatial axes are -3 (rows) and -2 (columns); channels last

def _dfwd(u, axis):
    out = np.zeros_like(u)
    n = u.shape[axis]
    sl_lo = [slice(None)] * u.ndim
    sl_hi = [slice(None)] * u.ndim
    sl_lo[axis] = slice(0, n - 1)
    sl_hi[axis] = slice(1, n)
    out[tuple(sl_lo)] = u[tuple(sl_hi)] - u[tuple(sl_lo)]
    return out


def _dfwd_adj(p, axis):
    """Adjoint of :func:`_dfwd` (a negated backward difference)."""
    out = np.zeros_like(p)
    n = p.shape[axis]
    idx = [slice(None)] * p.ndim

    def s(a, b):
        t = list(idx)
        t[axis] = slice(a, b)
        return tuple(t)

    out[s(1, n)] += p[s(0, n - 1)]
    out[s(0, n - 1)] -= p[s(0, n - 1)]
    return out


def grad(u):
    """Forward-difference gradient ``(d_rows, d_cols)`` with Neumann boundary."""
    return _dfwd(u, -3), _dfwd(u, -2)


def grad_adjoint(g):
    """Adjoint of :func:`grad`; ``-div``."""
    return _dfwd_adj(g[0], -3) + _dfwd_adj(g[1], -2)


def _dfwd_inner(u, axis):
    """Forward difference that ignores the last sample along ``axis``.

    Used for the diagonal of the symmetrized gradient: the last row (column)
    of the row (column) component of ``w`` pairs with a structurally zero
    gradient entry and is excluded, which puts affine images in the TGV kernel.
    """
    out = np.zeros_like(u)
    n = u.shape[axis]
    if n < 3:
        return out
    sl_lo = [slice(None)] * u.ndim
    sl_hi = [slice(None)] * u.ndim
    sl_lo[axis] = slice(0, n - 2)
    sl_hi[axis] = slice(1, n - 1)
    out[tuple(sl_lo)] = u[tuple(sl_hi)] - u[tuple(sl_lo)]
    return out


def _dfwd_inner_adj(p, axis):
    out = np.zeros_like(p)
    n = p.shape[axis]
    if n < 3:
        return out
    idx = [slice(None)] * p.ndim

    def s(a, b):
        t = list(idx)
        t[axis] = slice(a, b)
        return tuple(t)

    out[s(1, n - 1)] += p[s(0, n - 2)]
    out[s(0, n - 2)] -= p[s(0, n - 2)]
    return out


def sym_grad(w):
    """Symmetrized gradient of vector field ``w`` -> ``(e_rr, e_cc, e_rc)``."""
    w_r, w_c = w
    return (_dfwd_inner(w_r, -3), _dfwd_inner(w_c, -2),
            0.5 * (_dfwd(w_r, -2) + _dfwd(w_c, -3)))


def sym_grad_adjoint(q):
    """Adjoint of :func:`sym_grad` under the inner product weighting ``e_rc`` twice."""
    q_rr, q_cc, q_rc = q
    return (_dfwd_inner_adj(q_rr, -3) + _dfwd_adj(q_rc, -2),
            _dfwd_inner_adj(q_cc, -2) + _dfwd_adj(q_rc, -3))


def total_variation(u) -> float:
    """Isotropic TV summed over channels."""
    gr, gc = grad(np.asarray(u, dtype=np.float64))
    return float(np.sum(np.sqrt(gr * gr + gc * gc)))


def _shrink_iso(gr, gc, thresh):
    mag = np.sqrt(gr * gr + gc * gc)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > thresh, 1.0 - thresh / np.where(mag > 0, mag, 1.0), 0.0)
    return gr * scale, gc * scale


class _NeumannPoisson:
    """Solves ``(a I + b grad^T grad) u = rhs`` exactly via the DCT-II."""

    def __init__(self, shape, a, b):
        h, w = shape[-3], shape[-2]
        ev_r = 2.0 - 2.0 * np.cos(np.pi * np.arange(h) / h)
        ev_c = 2.0 - 2.0 * np.cos(np.pi * np.arange(w) / w)
        lap = ev_r[:, None, None] + ev_c[None, :, None]
        self.denom = a + b * lap

    def __call__(self, rhs):
        coef = sfft.dctn(rhs, type=2, axes=(-3, -2), norm="ortho")
        return sfft.idctn(coef / self.denom, type=2, axes=(-3, -2), norm="ortho")


# ------------------------------------------------------------ fused kernels
# Per-pixel loops compiled with numba; each mirrors the numpy operators above
# (forward differences, Neumann boundary) and :func:`prox_data`.

_DCODE = {"l2": 0, "huber": 1, "nll_poisson": 2, "nll_pg": 3}


@njit(cache=True)
def _prox1(code, v, y, rho, delta, p_max, sr2):
    if code == 0:
        return (2.0 * y + rho * v) / (2.0 + rho)
    if code == 1:
        r0 = v - y
        quad = rho * r0 / (2.0 + rho)
        if abs(quad) <= delta:
            return y + quad
        sgn = 1.0 if r0 > 0 else (-1.0 if r0 < 0 else 0.0)
        return y + r0 - sgn * (2.0 * delta / rho)
    if code == 2:
        yc = y if y > 0.0 else 0.0
        b = rho * v - p_max
        return (b + np.sqrt(b * b + 4.0 * rho * p_max * yc)) / (2.0 * rho)
    yc = y if y > 0.0 else 0.0
    var = yc / p_max + sr2
    if var < 1e-12:
        var = 1e-12
    return (y + rho * var * v) / (1.0 + rho * var)


@njit(cache=True)
def _shrink1(a, b, t):
    mag = np.sqrt(a * a + b * b)
    if mag > t:
        s = 1.0 - t / mag
        return a * s, b * s
    return 0.0, 0.0


@njit(cache=True)
def _bregman_step(u, y, br, bc, thresh, mu, rhs):
    """Shrink + Bregman update from ``u``; writes the next u-system rhs."""
    H, W, C = u.shape
    dr = np.empty_like(u)
    dc = np.empty_like(u)
    for i in range(H):
        for j in range(W):
            for c in range(C):
                gr = u[i + 1, j, c] - u[i, j, c] if i < H - 1 else 0.0
                gc = u[i, j + 1, c] - u[i, j, c] if j < W - 1 else 0.0
                a, b = _shrink1(gr + br[i, j, c], gc + bc[i, j, c], thresh)
                br[i, j, c] += gr - a
                bc[i, j, c] += gc - b
                dr[i, j, c] = a - br[i, j, c]
                dc[i, j, c] = b - bc[i, j, c]
    for i in range(H):
        for j in range(W):
            for c in range(C):
                # grad^T of (dr, dc)
                g = 0.0
                if i > 0:
                    g += dr[i - 1, j, c]
                if i < H - 1:
                    g -= dr[i, j, c]
                if j > 0:
                    g += dc[i, j - 1, c]
                if j < W - 1:
                    g -= dc[i, j, c]
                rhs[i, j, c] = y[i, j, c] + mu * g


@njit(cache=True)
def _rel_change(u_new, u):
    num = 0.0
    den = 0.0
    for k in range(u.size):
        d = u_new.flat[k] - u.flat[k]
        num += d * d
        den += u_new.flat[k] * u_new.flat[k]
    if den <= 0.0:
        return 0.0 if num == 0.0 else np.inf
    return np.sqrt(num / den)


@njit(cache=True)
def _admm_step(u, y, v, a, zr, zc, br, bc, thresh, code, rho_d, rho_tv,
               delta, p_max, sr2, rhs):
    """z/v/dual updates from ``u``; writes the next u-system rhs."""
    H, W, C = u.shape
    for i in range(H):
        for j in range(W):
            for c in range(C):
                gr = u[i + 1, j, c] - u[i, j, c] if i < H - 1 else 0.0
                gc = u[i, j + 1, c] - u[i, j, c] if j < W - 1 else 0.0
                s, t = _shrink1(gr + br[i, j, c], gc + bc[i, j, c], thresh)
                zr[i, j, c] = s
                zc[i, j, c] = t
                vv = _prox1(code, u[i, j, c] + a[i, j, c], y[i, j, c], rho_d, delta, p_max, sr2)
                v[i, j, c] = vv
                br[i, j, c] += gr - s
                bc[i, j, c] += gc - t
                a[i, j, c] += u[i, j, c] - vv
    for i in range(H):
        for j in range(W):
            for c in range(C):
                g = 0.0
                if i > 0:
                    g += zr[i - 1, j, c] - br[i - 1, j, c]
                if i < H - 1:
                    g -= zr[i, j, c] - br[i, j, c]
                if j > 0:
                    g += zc[i, j - 1, c] - bc[i, j - 1, c]
                if j < W - 1:
                    g -= zc[i, j, c] - bc[i, j, c]
                rhs[i, j, c] = rho_d * (v[i, j, c] - a[i, j, c]) + rho_tv * g


@njit(cache=True)
def _tgv_kernel(y, a1, a0, iters, code, delta, p_max, sr2):
    H, W, C = y.shape
    tau = 1.0 / np.sqrt(12.0)
    sig = tau
    rho = 1.0 / tau
    u = y.copy()
    ub = y.copy()
    w0 = np.zeros_like(y)
    w1 = np.zeros_like(y)
    wb0 = np.zeros_like(y)
    wb1 = np.zeros_like(y)
    p0 = np.zeros_like(y)
    p1 = np.zeros_like(y)
    q0 = np.zeros_like(y)
    q1 = np.zeros_like(y)
    q2 = np.zeros_like(y)
    for _ in range(iters):
        # dual ascent on p (first order) and q (second order)
        for i in range(H):
            for j in range(W):
                for c in range(C):
                    gr = ub[i + 1, j, c] - ub[i, j, c] if i < H - 1 else 0.0
                    gc = ub[i, j + 1, c] - ub[i, j, c] if j < W - 1 else 0.0
                    s0 = p0[i, j, c] + sig * (gr - wb0[i, j, c])
                    s1 = p1[i, j, c] + sig * (gc - wb1[i, j, c])
                    sc = max(1.0, np.sqrt(s0 * s0 + s1 * s1) / a1)
                    p0[i, j, c] = s0 / sc
                    p1[i, j, c] = s1 / sc
                    # symmetrized gradient of w_bar (see sym_grad)
                    e0 = wb0[i + 1, j, c] - wb0[i, j, c] if i < H - 2 else 0.0
                    e1 = wb1[i, j + 1, c] - wb1[i, j, c] if j < W - 2 else 0.0
                    e2 = 0.0
                    if j < W - 1:
                        e2 += wb0[i, j + 1, c] - wb0[i, j, c]
                    if i < H - 1:
                        e2 += wb1[i + 1, j, c] - wb1[i, j, c]
                    e2 *= 0.5
                    t0 = q0[i, j, c] + sig * e0
                    t1 = q1[i, j, c] + sig * e1
                    t2 = q2[i, j, c] + sig * e2
                    sc = max(1.0, np.sqrt(t0 * t0 + t1 * t1 + 2.0 * t2 * t2) / a0)
                    q0[i, j, c] = t0 / sc
                    q1[i, j, c] = t1 / sc
                    q2[i, j, c] = t2 / sc
        # primal descent on u (data prox) and w
        for i in range(H):
            for j in range(W):
                for c in range(C):
                    gtp = 0.0
                    if i > 0:
                        gtp += p0[i - 1, j, c]
                    if i < H - 1:
                        gtp -= p0[i, j, c]
                    if j > 0:
                        gtp += p1[i, j - 1, c]
                    if j < W - 1:
                        gtp -= p1[i, j, c]
                    un = _prox1(code, u[i, j, c] - tau * gtp, y[i, j, c], rho, delta, p_max, sr2)
                    ub[i, j, c] = 2.0 * un - u[i, j, c]
                    u[i, j, c] = un
                    # adjoint of the symmetrized gradient applied to q
                    eq0 = 0.0
                    eq1 = 0.0
                    if 1 <= i <= H - 2:
                        eq0 += q0[i - 1, j, c]
                    if i <= H - 3:
                        eq0 -= q0[i, j, c]
                    if j > 0:
                        eq0 += q2[i, j - 1, c]
                    if j < W - 1:
                        eq0 -= q2[i, j, c]
                    if 1 <= j <= W - 2:
                        eq1 += q1[i, j - 1, c]
                    if j <= W - 3:
                        eq1 -= q1[i, j, c]
                    if i > 0:
                        eq1 += q2[i - 1, j, c]
                    if i < H - 1:
                        eq1 -= q2[i, j, c]
                    n0 = w0[i, j, c] + tau * (p0[i, j, c] - eq0)
                    n1 = w1[i, j, c] + tau * (p1[i, j, c] - eq1)
                    wb0[i, j, c] = 2.0 * n0 - w0[i, j, c]
                    wb1[i, j, c] = 2.0 * n1 - w1[i, j, c]
                    w0[i, j, c] = n0
                    w1[i, j, c] = n1
    return u


def _meta_scalars(d, meta):
    if d in ("nll_poisson", "nll_pg"):
        if meta is None:
            raise ValueError(f"{d} data term needs p_max metadata")
        p_max = float(meta["p_max"])
        _pos("p_max", p_max)
        sr = float(meta.get("sigma_read", 0.0)) if d == "nll_pg" else 0.0
        return p_max, sr * sr
    return 1.0, 0.0


def _as_hwc(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[:, :, None]
    return np.ascontiguousarray(y)


def _members(*params):
    """Broadcast scalar/1-D parameters to a list of per-member tuples."""
    arrs = [None if p is None else np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in params]
    sizes = {a.size for a in arrs if a is not None}
    k = max(sizes) if sizes else 1
    if any(s not in (1, k) for s in sizes):
        raise ValueError("batched parameters must share one length")
    batched = any(p is not None and np.ndim(p) > 0 for p in params)
    rows = []
    for m in range(k):
        rows.append(tuple(None if a is None else float(a[m if a.size > 1 else 0]) for a in arrs))
    return rows, batched


# -------------------------------------------------------------------- TV-L2

def _tv_l2_single(y, lam, max_iter, eps):
    w = 1.0 / (2.0 * lam)
    beta = 4.0 * w
    mu = beta / (2.0 * w)
    solve = _NeumannPoisson(y.shape, 1.0, mu)
    u = y.copy()
    br = np.zeros_like(y)
    bc = np.zeros_like(y)
    rhs = np.empty_like(y)
    for _ in range(max_iter):
        _bregman_step(u, y, br, bc, 1.0 / beta, mu, rhs)
        u_new = solve(rhs)
        rel = _rel_change(u_new, u)
        u = u_new
        if rel < eps:
            break
    return u


def denoise_tv_l2(y, lam, max_iter: int = TV_L2_MAX_ITER, eps: float = TV_L2_EPS):
    """Isotropic TV denoising by split Bregman.

    Minimizes ``TV(u) + w ||u - y||^2`` per channel with fidelity weight
    ``w = 1 / (2 lam)``; the Bregman penalty is ``4 w`` and each u-step is an
    exact DCT solve. Stops when ``||u_k - u_{k-1}|| / ||u_k|| < eps`` or after
    ``max_iter`` iterations.
    """
    _pos("lambda", lam)
    y = _as_hwc(y)
    rows, batched = _members(lam)
    out = [_tv_l2_single(y, row[0], max_iter, eps) for row in rows]
    return np.stack(out) if batched else out[0]


# ------------------------------------------------------------------ TV ADMM

def _tv_admm_single(y, lam, d, delta, meta, iters, rho_tv, rho_data):
    code = _DCODE[d]
    p_max, sr2 = _meta_scalars(d, meta)
    solve = _NeumannPoisson(y.shape, rho_data, rho_tv)
    v = y.copy()
    a = np.zeros_like(y)
    zr, zc = grad(y)
    br = np.zeros_like(y)
    bc = np.zeros_like(y)
    rhs = rho_data * v + rho_tv * grad_adjoint((zr, zc))
    dl = 1.0 if delta is None else delta
    u = y
    for _ in range(iters):
        u = solve(rhs)
        _admm_step(u, y, v, a, zr, zc, br, bc, lam / rho_tv, code, rho_data, rho_tv,
                   dl, p_max, sr2, rhs)
    return u


def denoise_tv_admm(y, lam, d: str = "huber", delta=None, meta: dict | None = None,
                    iters: int = TV_ADMM_ITER, rho_tv: float = RHO_TV,
                    rho_data: float = RHO_DATA):
    """ADMM for ``D_d(u, y) + lam TV(u)`` with a fixed iteration count.

    Splits ``z = grad u`` (penalty ``rho_tv``) and ``v = u`` (penalty
    ``rho_data``, resolved by the data prox). The u-step is an exact DCT solve.
    """
    _check(d)
    _pos("lambda", lam)
    if d == "huber":
        _pos("delta", delta)
    y = _as_hwc(y)
    rows, batched = _members(lam, delta)
    out = [_tv_admm_single(y, l, d, dl, meta, iters, rho_tv, rho_data) for l, dl in rows]
    return np.stack(out) if batched else out[0]


def denoise_tv_huber(y, delta, lam, **kw):
    """Huber-data TV denoising (ADMM, 100 iterations, rho_TV=2, rho_data=5)."""
    return denoise_tv_admm(y, lam, d="huber", delta=delta, **kw)


# ---------------------------------------------------------------------- TGV

def tgv_weights(lam, gamma):
    """First/second order TGV weights ``(alpha1, alpha0) = (lam, gamma * lam)``."""
    return lam, np.multiply(gamma, lam)


def denoise_tgv(y, d: str, lam, gamma, delta=None, meta: dict | None = None,
                iters: int = TGV_ITER):
    """Second-order TGV denoising by a primal-dual (Chambolle-Pock) scheme.

    Solves ``min_{u,w} D_d(u, y) + alpha1 ||grad u - w|| + alpha0 ||E w||``
    with ``alpha1 = lam`` and ``alpha0 = gamma * lam``, step sizes
    ``sigma = tau = 1/sqrt(12)``, for exactly ``iters`` iterations, starting
    from ``u = y``, ``w = 0``.
    """
    _check(d)
    _pos("lambda", lam)
    _pos("gamma", gamma)
    if d == "huber":
        _pos("delta", delta)
    y = _as_hwc(y)
    p_max, sr2 = _meta_scalars(d, meta)
    code = _DCODE[d]
    rows, batched = _members(lam, gamma, delta)
    out = []
    for l, g, dl in rows:
        a1, a0 = tgv_weights(l, g)
        out.append(_tgv_kernel(y, a1, float(a0), iters, code, 1.0 if dl is None else dl,
                               p_max, sr2))
    return np.stack(out) if batched else out[0]


# ----------------------------------------------------------------- dispatch

def denoise(y, d: str, r: str, p: HyperVector, meta: dict | None = None):
    """Run configuration ``(d, r)`` with solver-domain hyperparameters ``p``."""
    _check(d, r)
    if p.domain != "solver":
        p = p.to_solver()
    if tuple(p.mask) != tuple(active_mask(d, r)):
        raise ValueError(f"hyper vector mask {p.mask} does not match ({d}, {r})")
    return denoise_batch(y, d, r, np.array([p.slots]), meta)[0]


def denoise_batch(y, d: str, r: str, slots, meta: dict | None = None):
    """Solve for several solver-domain slot rows ``(K, 3)`` at once."""
    slots = np.asarray(slots, dtype=np.float64).reshape(-1, 3)
    delta = slots[:, 0] if d == "huber" else None
    lam = slots[:, 1]
    if r == "tgv":
        return denoise_tgv(y, d, lam, slots[:, 2], delta=delta, meta=meta)
    if d == "l2":
        return denoise_tv_l2(y, lam)
    return denoise_tv_admm(y, lam, d=d, delta=delta, meta=meta)
