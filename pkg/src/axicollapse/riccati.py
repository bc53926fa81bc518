"""The iterated Riccati system for the connection coefficients.

K22 and K12 are solved backward from the singularity with their singular
free branches suppressed; K11 is solved forward from the matched surface,
where its quadratic is non-focusing.  The leading r^{-3/2} coefficients
are the exponent-map roots of the wave amplitude, and the solvers work in
subtracted variables so those leading parts cancel analytically rather
than numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .background import horizon_factor
from .frame import BackgroundGeometry
from .fuchsian import cum_integral, cum_weighted_integral, measure_tail_power
from .grids import RadialGrid, ScalarHistory, ScalarSlice, d_log_r
from .kasner import d1 as kasner_d1
from .kasner import d2 as kasner_d2
from .wave import WaveState

__all__ = [
    "FrameConnection",
    "RiccatiForcing",
    "RiccatiDecomposition",
    "RiccatiError",
    "hessian_forcing",
    "solve_K22_K12_backward",
    "solve_K11_forward",
    "riccati_march",
    "decompose",
]


class RiccatiError(RuntimeError):
    pass


@dataclass
class FrameConnection:
    """Connection coefficient histories on the rho grid; K33 = e0 gamma."""

    grid: RadialGrid
    K11: np.ndarray
    K22: np.ndarray
    K12: np.ndarray
    K33: np.ndarray

    def history(self, name: str) -> ScalarHistory:
        parity = "odd" if name == "K12" else "even"
        return ScalarHistory(getattr(self, name), self.grid.nodes, parity, name)

    @property
    def trK(self) -> np.ndarray:
        return self.K11 + self.K22 + self.K33


@dataclass
class RiccatiForcing:
    """Hessian + gradient + e0-part combinations driving the K equations."""

    grid: RadialGrid
    H11: np.ndarray
    H22: np.ndarray
    H12: np.ndarray


@dataclass
class RiccatiDecomposition:
    d1_field: np.ndarray
    d2_field: np.ndarray
    u11: np.ndarray
    u22: np.ndarray
    u12: np.ndarray
    leading11: np.ndarray
    leading22: np.ndarray


# ---------------------------------------------------------------------------
# forcing
# ---------------------------------------------------------------------------


def hessian_forcing(geo_prev: BackgroundGeometry, wave_new: WaveState) -> RiccatiForcing:
    """RHS combinations of the connection equations from the new wave iterate.

    The projected Hessian and frame gradients are built on the previous
    iterate's geometry; e0-parts combine the closed-form reference chain
    with a radial finite difference of the marched rest derivative.
    """
    grid = geo_prev.grid
    n = grid.n_r
    rho3 = grid.nodes[:, None, None]
    r = geo_prev.fol.r_of_rho(rho3)
    w = geo_prev.fol.w_of_r(r)
    sD = np.sqrt(horizon_factor(r, geo_prev.M))
    e0_vu = -sD * w * d_log_r(wave_new.v_u, grid.dx) / rho3

    H11 = np.empty_like(wave_new.u)
    H22 = np.empty_like(wave_new.u)
    H12 = np.empty_like(wave_new.u)
    v_full = wave_new.e0_gamma
    for k in range(n):
        c = geo_prev.slice_cache(k)
        bundle = geo_prev.hessian_bundle(c, wave_new.u[k], wave_new.v_u[k], e0_vu[k])
        e0_v = c.e0_v_ref + e0_vu[k]
        e0_part = e0_v + v_full[k] ** 2
        H11[k] = bundle["H11c"] - e0_part
        H22[k] = bundle["H22c"] - e0_part
        H12[k] = bundle["H12c"]
    return RiccatiForcing(grid, H11, H22, H12)


# ---------------------------------------------------------------------------
# backward solves
# ---------------------------------------------------------------------------


def _backward_regular_grid(f_x: np.ndarray, g_x: np.ndarray, x: np.ndarray, zeta: np.ndarray):
    """u with d_x u + f_x u = g_x, regular from the singularity end (last index).

    The tail below the innermost node uses the measured leading power of the
    forcing; zeta is the angular field of leading exponents (for the tail
    formula and its convergence guard).
    """
    W = cum_integral(f_x, x)
    Wf, gf, xf = W[::-1], g_x[::-1], x[::-1]
    # g_x = g_rho * rho; the tail formula wants the d_rho-form forcing
    rho_inner = np.exp(x[-1])
    rho_next = np.exp(x[-2])
    g_rho_inner = g_x[-1] / rho_inner
    g_rho_next = g_x[-2] / rho_next
    p = measure_tail_power(g_rho_inner, g_rho_next, rho_inner, rho_next)
    zmin = float(np.min(zeta))
    if zmin + p + 1.0 <= 0.25:
        raise RiccatiError(f"divergent regularized tail: zeta+p+1 = {zmin + p + 1.0:.3f}")
    tail = g_rho_inner * rho_inner / (zeta + p + 1.0)
    C = cum_weighted_integral(Wf, gf, xf, tail=tail)
    return C[::-1].copy()


def solve_K22_K12_backward(
    forcing: RiccatiForcing,
    wave_new: WaveState,
    K12_prev: np.ndarray,
    geo_prev: BackgroundGeometry,
    picard_iters: int = 8,
    picard_tol: float = 1e-10,
):
    """K22 (nonlinear, Picard on the integral form) and K12 (linear) backward.

    The K22 equation quadratic uses the previous iterate's K12, which
    decouples the two solves.  Both suppress the r^{2 d2 - alpha} free
    branch by integrating from the singularity.
    """
    grid = geo_prev.grid
    x = grid.x
    rho3 = grid.nodes[:, None, None]
    r = geo_prev.fol.r_of_rho(rho3)
    w = geo_prev.fol.w_of_r(r)
    sD = np.sqrt(horizon_factor(r, geo_prev.M))
    M2 = np.sqrt(2.0 * geo_prev.M)
    alpha = wave_new.alpha.values
    d2f = kasner_d2(alpha)
    v_full = wave_new.e0_gamma

    K22_hat = d2f[None] * M2 * r ** (-1.5)
    e0_K22_hat = d2f[None] * M2 * 1.5 * sD * r ** (-2.5)
    G_raw = forcing.H22 - (e0_K22_hat + K22_hat**2 + v_full * K22_hat)

    # d_r u + f u = g  ->  x = log rho form with the r(rho) Jacobian
    f_r = -(2.0 * K22_hat + v_full) / sD
    f_x = f_r * rho3 / w
    zeta = alpha - 2.0 * d2f
    u22 = np.zeros_like(G_raw)
    res_prev = np.inf
    for it in range(picard_iters):
        g_r = -(G_raw + K12_prev**2 - u22**2) / sD
        g_x = g_r * rho3 / w
        u_new = _backward_regular_grid(f_x, g_x, x, zeta)
        res = float(np.max(np.abs(u_new - u22) * r**1.5)) / M2
        u22 = u_new
        if res <= picard_tol:
            break
        if res > res_prev * 1.5:
            k_bad = int(np.argmax(np.max(np.abs(u_new) * r**1.5, axis=(1, 2))))
            raise RiccatiError(
                f"K22 Picard iteration not contracting at iteration {it} "
                f"(slice rho={grid.nodes[k_bad]:.3e}, residual {res:.3e})"
            )
        res_prev = res
    K22 = K22_hat + u22

    f12_r = -(2.0 * K22 + v_full) / sD
    f12_x = f12_r * rho3 / w
    g12_x = -(forcing.H12 / sD) * rho3 / w
    K12 = _backward_regular_grid(f12_x, g12_x, x, zeta)
    return K22, K12


# ---------------------------------------------------------------------------
# forward K11
# ---------------------------------------------------------------------------


def _interp_columns_x(F: np.ndarray, x: np.ndarray, x0: float) -> np.ndarray:
    """Lagrange-quintic interpolation of a history at log-radius x0.

    The forward connection solve substeps between nodes; a cubic model of
    the forcing would floor its accuracy at (dx)^4, above the 1e-6 target.
    """
    n = x.size
    h = x[1] - x[0]
    s = (x0 - x[0]) / h
    if n < 6:
        i0 = int(np.clip(np.floor(s) - 1, 0, n - 4))
        u = s - i0
        l0 = -(u - 1) * (u - 2) * (u - 3) / 6.0
        l1 = u * (u - 2) * (u - 3) / 2.0
        l2 = -u * (u - 1) * (u - 3) / 2.0
        l3 = u * (u - 1) * (u - 2) / 6.0
        return l0 * F[i0] + l1 * F[i0 + 1] + l2 * F[i0 + 2] + l3 * F[i0 + 3]
    i0 = int(np.clip(np.floor(s) - 2, 0, n - 6))
    u = s - i0
    out = 0.0
    taus = np.arange(6.0)
    for j in range(6):
        lj = 1.0
        for m in range(6):
            if m != j:
                lj = lj * (u - taus[m]) / (taus[j] - taus[m])
        out = out + lj * F[i0 + j]
    return out


def riccati_march(y0, s_grid, coeffs, substeps: int = 1, ceiling: float = 1e12):
    """Implicit-midpoint march of  dy/ds = -(A y^2 + B y + C)(s).

    coeffs(s) returns (A, B, C) broadcasting against y; each step solves its
    scalar quadratic by vectorized Newton.  Returns the history on s_grid;
    raises on detected blow-up with the offending location.
    """
    y = np.array(y0, dtype=float)
    out = np.empty((len(s_grid),) + y.shape)
    out[0] = y
    for n in range(len(s_grid) - 1):
        h = (s_grid[n + 1] - s_grid[n]) / substeps
        s = s_grid[n]
        for _ in range(substeps):
            A, B, C = coeffs(s + 0.5 * h)
            Y = y + 0.0
            converged = False
            for _ in range(24):
                ymid = 0.5 * (y + Y)
                phi = Y - y + h * (A * ymid**2 + B * ymid + C)
                dphi = 1.0 + h * (A * ymid + 0.5 * B)
                step = phi / dphi
                Y = Y - step
                if np.max(np.abs(step)) < 1e-13 * max(1.0, float(np.max(np.abs(Y)))):
                    converged = True
                    break
            if not converged or not np.all(np.isfinite(Y)):
                # the implicit quadratic lost its real root: the solution
                # focuses inside this step
                raise RiccatiError(
                    f"Riccati blow-up detected near s={s + h:.6g} (implicit step folded)"
                )
            y = Y
            s += h
        bad = ~np.isfinite(y) | (np.abs(y) > ceiling)
        if np.any(bad):
            loc = np.unravel_index(int(np.argmax(bad)), y.shape) if y.ndim else ()
            raise RiccatiError(
                f"Riccati blow-up detected near s={s_grid[n + 1]:.6g} at {loc}"
            )
        out[n + 1] = y
    return out


def solve_K11_forward(
    init: ScalarSlice | np.ndarray,
    forcing: RiccatiForcing,
    wave_new: WaveState,
    K12_new: np.ndarray,
    geo_prev: BackgroundGeometry,
    substeps: int = 32,
    guard_rel: float = 0.25,
    ceiling: float = 1e12,
):
    """Forward implicit-midpoint solve of the K11 equation from the surface.

    Marches the scaled variable y = r^{3/2} K11 in log rho (smooth, O(1)),
    with the forcing interpolated between nodes.  The surface datum must
    sit within the non-focusing band around the background value, else the
    quadratic can focus before r = 0.
    """
    grid = geo_prev.grid
    x = grid.x
    i0 = grid.i_epsilon
    init_vals = init.values if isinstance(init, ScalarSlice) else np.asarray(init, dtype=float)
    M = geo_prev.M

    rho_eps = grid.nodes[i0]
    r_eps = geo_prev.fol.r_of_rho(np.full(init_vals.shape, rho_eps))
    K11_schw = (M / r_eps**2) / np.sqrt(horizon_factor(r_eps, M))
    if np.any(np.abs(init_vals - K11_schw) > guard_rel * K11_schw):
        raise RiccatiError(
            "K11 surface datum leaves the non-focusing band around the background value"
        )

    v_full = wave_new.e0_gamma
    F_combo = forcing.H11 - 3.0 * K12_new**2  # remaining RHS of the K11 equation
    shape = init_vals.shape

    def coeffs(x0):
        # dy/dx = (3/2)(rho/(w r)) y - (rho/(sD w)) [H r^{3/2} - y^2 r^{-3/2} - v y]
        rho = float(np.exp(x0))
        r = geo_prev.fol.r_of_rho(np.full(shape, rho))
        w = geo_prev.fol.w_of_r(r)
        sD = np.sqrt(horizon_factor(r, M))
        v = _interp_columns_x(v_full, x, x0)
        H = _interp_columns_x(F_combo, x, x0)
        fac = rho / (sD * w)
        A = -fac * r ** (-1.5)
        B = -(1.5 * rho / (w * r) + fac * v)
        C = fac * H * r**1.5
        return A, B, C

    rho3 = grid.nodes[:, None, None]
    r_hist = geo_prev.fol.r_of_rho(rho3)
    y0 = r_eps**1.5 * init_vals
    down = riccati_march(y0, x[i0:], coeffs, substeps, ceiling)
    K11 = np.empty_like(v_full)
    K11[i0:] = down / r_hist[i0:] ** 1.5
    if i0 > 0:
        up = riccati_march(y0, x[i0::-1], coeffs, substeps, ceiling)
        K11[: i0 + 1] = up[::-1] / r_hist[: i0 + 1] ** 1.5
    if np.any(K11[-1] <= 0):
        raise RiccatiError("K11 lost positivity near the singularity (gauge breakdown)")
    return K11


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------


def decompose(conn: FrameConnection, alpha: ScalarSlice, fol=None, M: float = 1.0) -> RiccatiDecomposition:
    """Split K into the exponent-map leading parts and remainders."""
    a = alpha.values
    d1f, d2f = kasner_d1(a), kasner_d2(a)
    rho3 = conn.grid.nodes[:, None, None]
    r = rho3 if fol is None else fol.r_of_rho(rho3)
    M2 = np.sqrt(2.0 * M)
    lead11 = d1f[None] * M2 * r ** (-1.5)
    lead22 = d2f[None] * M2 * r ** (-1.5)
    return RiccatiDecomposition(
        d1f, d2f, conn.K11 - lead11, conn.K22 - lead22, conn.K12.copy(), lead11, lead22
    )
