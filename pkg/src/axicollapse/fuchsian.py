"""Singular linear ODE toolkit for  d_r u + f u = G  with f ~ zeta/r.

Everything is integrated in x = log r (uniform on our grids), which keeps
the r -> 0 endpoint tame.  Exponentials of the integrating factor are only
ever formed as differences e^{W(s)-W(r)} between nearby points, so large
zeta cannot overflow intermediate quantities.  Backward ("regular from the
singularity") solutions suppress the free branch by construction: they are
pure forced integrals from r = 0, with the portion below the innermost
node evaluated in closed form from the declared leading power of the
forcing (the regularized tail).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grids import RadialGrid, ScalarHistory, ScalarSlice

__all__ = [
    "FuchsianProblem",
    "BranchSpec",
    "FuchsianError",
    "integrating_exponent",
    "solve_forward",
    "solve_backward_regular",
    "solve_backward",
    "detect_blowup",
    "cum_weighted_integral",
    "cum_integral",
    "measure_tail_power",
]


class FuchsianError(RuntimeError):
    pass


@dataclass
class BranchSpec:
    """Free-branch selector: suppressed, or carrying a coefficient field."""

    mode: str = "suppressed"  # "suppressed" | "free"
    coefficient: float | np.ndarray = 0.0

    def __post_init__(self):
        if self.mode not in ("suppressed", "free"):
            raise FuchsianError(f"unknown branch mode {self.mode!r}")
        if self.mode == "suppressed" and np.any(np.asarray(self.coefficient) != 0.0):
            raise FuchsianError("suppressed branch requires zero coefficient")


@dataclass
class FuchsianProblem:
    """d_r u + f u = G on a radial grid, with f r -> zeta as r -> 0.

    ``coefficient`` and ``forcing`` are callables of r broadcasting over the
    angular shape of ``leading_zeta`` (scalars are fine for radial toys).
    The construction validates |f r - zeta| <= bound r^delta on the nodes.
    """

    coefficient: Callable[[np.ndarray], np.ndarray]
    leading_zeta: float | np.ndarray
    forcing: Callable[[np.ndarray], np.ndarray]
    domain: RadialGrid
    delta: float = 1.0
    bound: float = np.inf
    forcing_tail_power: Optional[float] = None

    def __post_init__(self):
        if self.delta <= 0:
            raise FuchsianError("need delta > 0 in the coefficient expansion")
        zeta = self.leading_zeta
        if isinstance(zeta, ScalarSlice):
            zeta = zeta.values
        self.leading_zeta = np.asarray(zeta, dtype=float)
        if np.isfinite(self.bound):
            r = self.domain.nodes
            for rk in (r[0], r[-1], r[r.size // 2]):
                dev = np.abs(np.asarray(self.coefficient(rk)) * rk - self.leading_zeta)
                if np.any(dev > self.bound * rk**self.delta * (1 + 1e-12)):
                    raise FuchsianError(
                        f"coefficient violates |f r - zeta| <= bound r^delta at r={rk}"
                    )

    # gridded samples, shape (n_r, *angular)
    def _samples(self):
        r = self.domain.nodes
        shape = np.shape(self.leading_zeta)
        n_r = r.size
        f = np.empty((n_r,) + shape)
        g = np.empty((n_r,) + shape)
        for k, rk in enumerate(r):
            f[k] = self.coefficient(rk)
            g[k] = self.forcing(rk)
        return f, g


# ---------------------------------------------------------------------------
# quadrature cores (uniform x grid, signed spacing, 4th order)
# ---------------------------------------------------------------------------

_NPTS = 6  # panel stencil width; quintic model of the smooth factor

_stencil_cache: dict[tuple, np.ndarray] = {}


def _interval_stencil(k: int, n: int):
    """Indices, tau-positions and Lagrange coefficients for [x_{k-1}, x_k].

    tau maps the interval to [0, 1] with node k-1 at 0 and node k at 1.
    """
    npts = min(_NPTS, n)
    lo = int(np.clip(k - npts // 2 - 1, 0, n - npts))
    idx = np.arange(lo, lo + npts)
    taus = (idx - (k - 1)).astype(float)
    key = tuple(taus)
    coef = _stencil_cache.get(key)
    if coef is None:
        V = np.vander(taus, npts, increasing=True)  # V[i, m] = tau_i^m
        coef = np.linalg.inv(V)  # coef[m, j]
        _stencil_cache[key] = coef
    return idx, taus, coef


def _exp_moments(mu: np.ndarray, nmom: int = _NPTS):
    """M_m(mu) = integral_0^1 e^{mu (tau - 1)} tau^m dtau, m < nmom, stable.

    Small |mu|: downward recursion seeded by a short series at high order
    (self-damping).  Large |mu|: upward recursion from M_0 = -expm1(-mu)/mu.
    """
    mu = np.asarray(mu, dtype=float)
    small = np.abs(mu) < 1.0
    M = np.zeros((nmom,) + mu.shape)
    # ---- small branch: series for the top moment, then recur downward ----
    mus = np.where(small, mu, 0.0)
    L = nmom + 7
    term = np.ones_like(mus)
    acc = np.zeros_like(mus) + 1.0 / (L + 1)
    fact = 1.0
    for k in range(1, 19):
        term = term * mus
        fact *= k
        acc = acc + term / (fact * (L + k + 1))
    Md = np.exp(-mus) * acc  # M_L
    down = [None] * (L + 1)
    down[L] = Md
    for m in range(L, 0, -1):
        Md = (1.0 - mus * Md) / m
        down[m - 1] = Md
    # ---- large branch: upward recursion ----
    mub = np.where(small, 1.0, mu)
    Mu = -np.expm1(-mub) / mub
    M[0] = np.where(small, down[0], Mu)
    for m in range(1, nmom):
        Mu = (1.0 - m * Mu) / mub
        M[m] = np.where(small, down[m], Mu)
    return M


def _panel_increment(Wb, gb, k, n, h):
    """Product-integration increment over [x_{k-1}, x_k] (generic per-k path)."""
    idx, taus, coef = _interval_stencil(k, n)
    mu = Wb[k] - Wb[k - 1]
    M = _exp_moments(mu, nmom=len(idx))
    inc = 0.0
    for pos, (j, tau_j) in enumerate(zip(idx, taus)):
        Q = Wb[j] - Wb[k] - mu * (tau_j - 1.0)
        gt = np.exp(Q) * gb[j]
        omega = sum(coef[m, pos] * M[m] for m in range(len(idx)))
        inc = inc + gt * omega
    return h * inc


def _flat_increments(gb, x):
    """I[k] for identically-zero W: plain quintic-panel quadrature weights."""
    n = x.size
    h = x[1] - x[0]
    I = np.zeros_like(gb)
    M0 = 1.0 / (1.0 + np.arange(_NPTS))  # moments at mu = 0
    for k in range(1, n):
        idx, taus, coef = _interval_stencil(k, n)
        omega = coef.T @ M0[: len(idx)]
        inc = 0.0
        for pos, j in enumerate(idx):
            inc = inc + omega[pos] * gb[j]
        I[k] = h * inc
    return I


def _all_increments(Wb, gb, x):
    """I[k] for k = 1..n-1, vectorized over the interior panels."""
    n = x.size
    h = x[1] - x[0]
    I = np.zeros_like(Wb)
    lo, hi = 3, n - 3  # full centered stencils for k in [lo, hi]
    if hi >= lo and n >= _NPTS:
        ks = np.arange(lo, hi + 1)
        Wk = Wb[lo : hi + 1]
        mu = Wk - Wb[lo - 1 : hi]
        M = _exp_moments(mu, _NPTS)
        idx0, taus, coef = _interval_stencil(lo, n)
        inc = 0.0
        width = hi + 1 - lo
        for m_pos in range(_NPTS):
            tau_j = taus[m_pos]
            Wj = Wb[lo - 3 + m_pos : lo - 3 + m_pos + width]
            gj = gb[lo - 3 + m_pos : lo - 3 + m_pos + width]
            Q = Wj - Wk - mu * (tau_j - 1.0)
            omega = 0.0
            for p in range(_NPTS):
                omega = omega + coef[p, m_pos] * M[p]
            inc = inc + np.exp(Q) * gj * omega
        I[lo : hi + 1] = h * inc
        edge_ks = [k for k in range(1, n) if k < lo or k > hi]
    else:
        edge_ks = list(range(1, n))
    for k in edge_ks:
        I[k] = _panel_increment(Wb, gb, k, n, h)
    return I


def cum_weighted_integral(W: np.ndarray, g: np.ndarray, x: np.ndarray, tail=0.0) -> np.ndarray:
    """C[k] = e^{-W[k]} * ( integral_{x[0]}^{x[k]} e^{W} g dx  +  tail * e^{W[0]} ).

    Product-integration panels: the weight e^{W(s)-W(x_k)} is split into the
    exact exponential of the secant slope of W times a small residual folded
    into the smooth factor, which is modeled by the quintic through six
    neighbouring samples.  The prefix combination works with exponentials of
    W differences only; when the pointwise W range is too large for that,
    a recursive scan with nearest-neighbour shifts is used instead.
    """
    Wb, gb = np.broadcast_arrays(W, g)
    Wb = np.asarray(Wb, dtype=float)
    gb = np.asarray(gb, dtype=float)
    n = x.size
    C = np.empty_like(gb)
    C[0] = tail
    if n == 1:
        return C
    h = x[1] - x[0]
    if n < 4:
        for k in range(1, n):
            dW = Wb[k - 1] - Wb[k]
            C[k] = C[k - 1] * np.exp(dW) + 0.5 * h * (np.exp(dW) * gb[k - 1] + gb[k])
        return C
    if not np.any(gb):
        C[:] = tail * np.exp(Wb[0] - Wb)
        return C
    I = _flat_increments(gb, x) if not np.any(Wb) else _all_increments(Wb, gb, x)
    rng = np.max(Wb, axis=0) - np.min(Wb, axis=0)
    if np.max(rng) < 600.0:
        Wref = np.max(Wb, axis=0)
        A = I * np.exp(Wb - Wref)
        A[0] = 0.0
        S = np.cumsum(A, axis=0)
        C = tail * np.exp(Wb[0] - Wb) + S * np.exp(Wref - Wb)
        C[0] = tail
        return C
    for k in range(1, n):
        C[k] = C[k - 1] * np.exp(Wb[k - 1] - Wb[k]) + I[k]
    return C


def cum_integral(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Plain 4th-order cumulative integral of samples y over uniform x."""
    return cum_weighted_integral(np.zeros(np.shape(y)), y, x, tail=0.0)


# ---------------------------------------------------------------------------
# integrating exponent
# ---------------------------------------------------------------------------


class IntegratingExponent:
    """W(r) = integral_{r_ref}^{r} f(s) ds with the zeta log(r/r_ref) part exact.

    Evaluated on the problem's grid nodes; off-node values by cubic
    interpolation in log r.
    """

    def __init__(self, problem: FuchsianProblem, r_ref: float):
        self.problem = problem
        self.r_ref = float(r_ref)
        grid = problem.domain
        r = grid.nodes
        x = grid.x
        zeta = problem.leading_zeta
        # remainder f - zeta/s integrated in x: integrand (f - zeta/s) * s
        rem = np.empty((r.size,) + np.shape(zeta))
        for k, rk in enumerate(r):
            rem[k] = (np.asarray(problem.coefficient(rk)) - zeta / rk) * rk
        if not np.all(np.isfinite(rem)):
            raise FuchsianError("quadrature failure: non-integrable coefficient remainder")
        R = cum_integral(rem, x)  # anchored at the top node
        # shift the anchor to r_ref: analytic part handles zeta exactly
        x_ref = np.log(self.r_ref)
        R_ref = self._interp_columns(R, x, x_ref)
        self.nodes_x = x
        self.values = zeta * (x.reshape((x.size,) + (1,) * np.ndim(zeta)) - x_ref) + (R - R_ref)

    @staticmethod
    def _interp_columns(F: np.ndarray, x: np.ndarray, x0: float):
        """Lagrange-cubic interpolation of columns F(x) at x0 (x uniform, signed)."""
        n = x.size
        h = x[1] - x[0]
        s = (x0 - x[0]) / h
        if n < 4:
            t = np.clip(s, 0.0, n - 1.0)
            i0 = int(np.clip(np.floor(t), 0, max(n - 2, 0)))
            w = t - i0
            return (1 - w) * F[i0] + w * F[min(i0 + 1, n - 1)]
        i0 = int(np.clip(np.floor(s) - 1, 0, n - 4))
        u = s - i0
        f0, f1, f2, f3 = F[i0], F[i0 + 1], F[i0 + 2], F[i0 + 3]
        l0 = -(u - 1) * (u - 2) * (u - 3) / 6.0
        l1 = u * (u - 2) * (u - 3) / 2.0
        l2 = -u * (u - 1) * (u - 3) / 2.0
        l3 = u * (u - 1) * (u - 2) / 6.0
        return l0 * f0 + l1 * f1 + l2 * f2 + l3 * f3

    def on_nodes(self) -> np.ndarray:
        return self.values

    def __call__(self, r):
        return self._interp_columns(self.values, self.nodes_x, float(np.log(r)))


def integrating_exponent(problem: FuchsianProblem, r_ref: float) -> IntegratingExponent:
    return IntegratingExponent(problem, r_ref)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


def _history(problem: FuchsianProblem, values: np.ndarray, name: str, parity: str = "even") -> ScalarHistory:
    vals = values
    if vals.ndim == 1:
        vals = vals[:, None, None]
    return ScalarHistory(vals, problem.domain.nodes, parity, name)


def solve_forward(problem: FuchsianProblem, u_init, to: float | None = None) -> ScalarHistory:
    """March from the top node down: u(r) for data u_init at nodes[0].

    Variation of parameters with the shifted-exponential quadrature; the
    homogeneous factor is exact up to the W quadrature.
    """
    if isinstance(u_init, ScalarSlice):
        u0 = u_init.values
    else:
        u0 = np.asarray(u_init, dtype=float)
    if not np.all(np.isfinite(u0)):
        raise FuchsianError("non-finite initial data")
    grid = problem.domain
    r, x = grid.nodes, grid.x
    W = integrating_exponent(problem, float(r[0])).on_nodes()
    _, g = problem._samples()
    C = cum_weighted_integral(W, g * r.reshape((r.size,) + (1,) * (g.ndim - 1)), x, tail=0.0)
    hom = np.exp(W[0] - W) * u0
    u = hom + C
    if not np.all(np.isfinite(u)):
        raise FuchsianError("forward solve produced non-finite values (overflowing branch)")
    return _history(problem, u, "fuchsian_forward")


def measure_tail_power(g_inner: np.ndarray, g_next: np.ndarray, r_inner: float, r_next: float) -> float:
    """Estimate the leading power of |g| from the two innermost nodes."""
    num = float(np.median(np.abs(g_inner)))
    den = float(np.median(np.abs(g_next)))
    if num <= 0 or den <= 0:
        return 0.0
    return float(np.log(num / den) / np.log(r_inner / r_next))


def solve_backward_regular(problem: FuchsianProblem, branch: BranchSpec | None = None) -> ScalarHistory:
    """u(r) = e^{-W(r)} integral_0^r e^{W} G ds, free branch absent.

    Requires zeta > 0 pointwise and integral convergence near 0, checked
    against the declared (or measured) leading power of G.
    """
    grid = problem.domain
    zeta = problem.leading_zeta
    if np.any(zeta <= 0):
        raise FuchsianError("backward-regular solve needs zeta > 0 pointwise")
    r, x = grid.nodes, grid.x
    _, g = problem._samples()
    gr = g * r.reshape((r.size,) + (1,) * (g.ndim - 1))
    W = integrating_exponent(problem, float(r[-1])).on_nodes()
    # flip to march upward from the singularity end
    Wf, gf, xf = W[::-1], gr[::-1], x[::-1]
    p = problem.forcing_tail_power
    if p is None:
        p = measure_tail_power(g[-1], g[-2], r[-1], r[-2])
    zmin = float(np.min(zeta))
    if zmin + p + 1.0 <= 0.25:
        raise FuchsianError(
            f"divergent (or near-divergent) tail integral: zeta+p+1 = {zmin + p + 1.0:.3f}"
        )
    tail = g[-1] * r[-1] / (zeta + p + 1.0)
    C = cum_weighted_integral(Wf, gf, xf, tail=tail)
    u = C[::-1].copy()
    if not np.all(np.isfinite(u)):
        raise FuchsianError("backward solve produced non-finite values")
    out = _history(problem, u, "fuchsian_backward")
    if branch is not None and branch.mode == "free":
        out = ScalarHistory(out.values + _free_branch(problem, branch), out.radii, out.parity, out.name)
    return out


def solve_backward(problem: FuchsianProblem, branch: BranchSpec) -> ScalarHistory:
    """Backward solve with an explicit free-branch coefficient.

    The free branch is normalized as c * exp(-zeta log r - R(r)) with the
    remainder R anchored at the outermost node, so for f = zeta/r exactly
    it is c * r^{-zeta}.
    """
    base = solve_backward_regular(problem)
    if branch.mode == "suppressed":
        return base
    return ScalarHistory(base.values + _free_branch(problem, branch), base.radii, base.parity, base.name)


def _free_branch(problem: FuchsianProblem, branch: BranchSpec) -> np.ndarray:
    grid = problem.domain
    r, x = grid.nodes, grid.x
    zeta = problem.leading_zeta
    rem = np.empty((r.size,) + np.shape(zeta))
    for k, rk in enumerate(r):
        rem[k] = (np.asarray(problem.coefficient(rk)) - zeta / rk) * rk
    R = cum_integral(rem, x)
    expo = -(zeta * x.reshape((x.size,) + (1,) * np.ndim(zeta)) + R)
    c = np.asarray(branch.coefficient, dtype=float)
    vals = c * np.exp(expo)
    if vals.ndim == 1:
        vals = vals[:, None, None] if np.ndim(c) == 0 else vals
    return vals


def detect_blowup(history: ScalarHistory, ceiling: float = 1e12):
    """First radius (in march order) where |u| exceeds the ceiling or is non-finite."""
    vals = history.values
    bad = ~np.isfinite(vals) | (np.abs(vals) > ceiling)
    if not np.any(bad):
        return None
    k = int(np.argmax(np.any(bad, axis=tuple(range(1, vals.ndim)))))
    flat = np.argmax(bad[k])
    loc = np.unravel_index(flat, vals.shape[1:])
    return float(history.radii[k]), tuple(int(i) for i in loc)
