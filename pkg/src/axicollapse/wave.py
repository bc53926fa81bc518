"""March of the reduced wave equation toward the singularity.

In the frame of the background iterate the equation for gamma^m is

    e0 v = -(K11 + K22 + e0 gamma_prev) v + S(gamma),   v = e0 gamma,
    S(gamma) = nabla_11 gamma + nabla_22 gamma
             + e1 gamma_prev e1 gamma + e2 gamma_prev e2 gamma,

linear in gamma^m.  The solver marches the rest variable
u = gamma - (log rho + log sin theta) whose reference chain is closed
form, so on the exact Schwarzschild background the discrete right-hand
side vanishes to rounding and the fixed point survives the march.  Time
direction is rho (decreasing); a two-stage midpoint scheme with CFL
substepping advances (u, v_u) slice to slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .background import horizon_factor
from .frame import BackgroundGeometry, SliceCache
from .grids import AngularGrid, RadialGrid, ScalarSlice

__all__ = [
    "WaveState",
    "WaveError",
    "assemble_background",
    "surface_wave_data",
    "march",
    "energy",
    "extract_alpha",
]


class WaveError(RuntimeError):
    pass


def assemble_background(*args, **kwargs) -> BackgroundGeometry:
    """Cache every coefficient field the wave operator needs, per slice."""
    return BackgroundGeometry(*args, **kwargs)


@dataclass
class WaveState:
    """The marched field and its derived quantities on the rho grid."""

    grid: RadialGrid
    ang: AngularGrid
    u: np.ndarray  # gamma - (log rho + log sin theta)
    v_u: np.ndarray  # e0 gamma - e0(log rho + ...) on the background foliation
    v_ref: np.ndarray  # closed-form e0 gamma_ref history
    log_rho_over_r: np.ndarray  # foliation bookkeeping field
    energies: np.ndarray  # (n_r, 3): kinetic, spatial, weighted_total
    alpha: ScalarSlice | None = None
    gamma1: np.ndarray | None = None

    @property
    def gamma(self) -> np.ndarray:
        grid, ang = self.grid, self.ang
        return self.u + np.log(grid.nodes)[:, None, None] + np.log(np.sin(ang.theta2d))[None]

    @property
    def e0_gamma(self) -> np.ndarray:
        return self.v_u + self.v_ref

    @property
    def gamma_rest(self) -> np.ndarray:
        """gamma - gamma_S(r, theta) = u + log(rho / r)."""
        return self.u + self.log_rho_over_r


def surface_wave_data(data, r_star: np.ndarray, ktilde12: np.ndarray):
    """(gamma, e0 gamma) on the matched surface from the abstract data.

    The normal derivative K33 is rotated into the e0 direction through the
    surface-adapted frame:  e0 gamma = q K33 + D^{-1/2} (e2~ r_*) e2~ gamma.
    """
    from .initial_data import tilde_frame_derivative

    M = data.M
    D = horizon_factor(r_star, M)
    e2_rs = tilde_frame_derivative(2, r_star, "even", data, ktilde12)
    q = np.sqrt(1.0 + e2_rs**2 / D)
    gamma0 = data.gamma_init.values
    e2t_gamma = tilde_frame_derivative(2, gamma0, "even", data, ktilde12)
    v0 = q * data.nu_gamma_init.values + e2_rs * e2t_gamma / np.sqrt(D)
    return gamma0, v0


def _char_substeps(geo: BackgroundGeometry, c: SliceCache, dx_abs: float, cfl: float, ceiling: int):
    """Substep count from the frame characteristic speeds on a slice."""
    ang = geo.ang
    chart = geo.chart
    # ebar_i in (t, theta) components
    dt_dT = 1.0 / chart.dT_dt
    dt_dTh = chart.dt_dTheta
    b1t = np.abs(c.inv_1T * dt_dT + c.inv_1Th * dt_dTh)
    b1th = np.abs(c.inv_1Th)
    b2t = np.abs(c.inv_2Th * dt_dTh)
    b2th = np.abs(c.inv_2Th)
    drho = dx_abs * c.rho
    speed = np.maximum(
        np.maximum(b1t, b2t) / ang.dt, np.maximum(b1th, b2th) / ang.dtheta
    ) / c.P
    n_sub = int(np.ceil(np.max(speed) * drho / cfl))
    n_sub = max(n_sub, 1)
    if n_sub > ceiling:
        raise WaveError(f"CFL substep count {n_sub} exceeds ceiling {ceiling} at rho={c.rho:.3e}")
    return n_sub


def _rhs(geo: BackgroundGeometry, c: SliceCache, u: np.ndarray, v_u: np.ndarray):
    """d/dx of (u, v_u) at a slice, x = log rho."""
    S0, coef = geo.march_source(c, u, v_u)
    e0_vu = (c.ref_source - c.trK * v_u + S0) / (1.0 - coef)
    fac = c.rho / c.P
    return -fac * v_u, -fac * e0_vu


def march(
    geo: BackgroundGeometry,
    u0: np.ndarray,
    v_u0: np.ndarray,
    cfl: float = 0.4,
    substep_ceiling: int = 256,
    energies: bool = True,
):
    """Advance (u, v_u) from the epsilon node down to r_min and up the head.

    Returns a WaveState with per-slice energies of the rest field.
    """
    grid, ang = geo.grid, geo.ang
    x = grid.x
    i0 = grid.i_epsilon
    n = grid.n_r
    u_hist = np.zeros((n, ang.n_t, ang.n_theta))
    v_hist = np.zeros_like(u_hist)
    u_hist[i0], v_hist[i0] = u0, v_u0

    def step_range(indices):
        u, v = u_hist[indices[0]].copy(), v_hist[indices[0]].copy()
        for k_from, k_to in zip(indices[:-1], indices[1:]):
            h_full = x[k_to] - x[k_from]
            c_here = geo.slice_cache(k_from)
            n_sub = _char_substeps(geo, c_here, abs(h_full), cfl, substep_ceiling)
            h = h_full / n_sub
            x_cur = x[k_from]
            for s in range(n_sub):
                c_a = geo.slice_cache(k_from) if s == 0 else geo.slice_cache_at(x_cur)
                du1, dv1 = _rhs(geo, c_a, u, v)
                c_mid = geo.slice_cache_at(x_cur + 0.5 * h)
                du2, dv2 = _rhs(geo, c_mid, u + 0.5 * h * du1, v + 0.5 * h * dv1)
                u = u + h * du2
                v = v + h * dv2
                x_cur += h
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise WaveError(f"non-finite wave field at rho={grid.nodes[k_to]:.3e}")
            u_hist[k_to], v_hist[k_to] = u, v

    step_range(list(range(i0, n)))  # toward the singularity
    if i0 > 0:
        step_range(list(range(i0, -1, -1)))  # fill the head region

    rho3 = grid.nodes[:, None, None]
    r = geo.fol.r_of_rho(rho3)
    w = geo.fol.w_of_r(r)
    sD = np.sqrt(horizon_factor(r, geo.M))
    v_ref = -sD * w / rho3
    log_ror = np.log(rho3 / r)

    state = WaveState(grid, ang, u_hist, v_hist, v_ref, log_ror, np.zeros((n, 3)))
    if energies:
        for k in range(n):
            kin, spa, tot = energy(state, geo, k)
            state.energies[k] = (kin, spa, tot)
    alpha, gamma1 = extract_alpha(state, geo)
    state.alpha = alpha
    state.gamma1 = gamma1
    return state


def energy(state: WaveState, geo: BackgroundGeometry, k: int):
    """(kinetic, spatial, weighted_total) of the rest field on slice k.

    kinetic = int (e0 gamma_rest)^2 vol_Euc, spatial the slice-tangent
    frame gradient squared; weighted_total = rho^3 (kinetic + spatial).
    """
    ang = geo.ang
    c = geo.slice_cache(k)
    rest = state.u[k] + state.log_rho_over_r[k]
    e0_rest = state.v_u[k] + state.v_ref[k] + c.sD / c.r  # e0 gamma_S = -sqrt(D)/r
    eb1 = geo.ebar(c, 1, rest, "even")
    eb2 = geo.ebar(c, 2, rest, "even")
    wgt = ang.sin_theta * ang.dt * ang.dtheta
    kinetic = float(np.sum(e0_rest**2 * wgt))
    spatial = float(np.sum((eb1**2 + eb2**2) * wgt))
    rho = geo.grid.nodes[k]
    return kinetic, spatial, rho**3 * (kinetic + spatial)


def extract_alpha(state: WaveState, geo: BackgroundGeometry, decades: float = 2.0):
    """alpha(t, theta) by Richardson extrapolation of gamma_rest / log rho.

    Samples at r_min and `decades` above it; the 1/log rho correction is
    eliminated by the two-point fit.
    """
    grid = state.grid
    if grid.epsilon > 0.5:
        raise WaveError("alpha extraction needs epsilon <= 1/2 in code units (log rho sign)")
    rest = state.gamma_rest
    x = grid.x
    k1 = grid.n_r - 1
    x2 = x[k1] + decades * np.log(10.0)
    k2 = int(np.clip(round((x2 - x[0]) / grid.dx), grid.i_epsilon, k1 - 1))
    y1, y2 = 1.0 / x[k1], 1.0 / x[k2]
    A1 = rest[k1] * y1
    A2 = rest[k2] * y2
    a_minus_1 = (A1 * y2 - A2 * y1) / (y2 - y1)
    alpha = ScalarSlice(1.0 + a_minus_1, float(grid.nodes[k1]), "even")
    gamma1 = state.gamma - alpha.values[None] * np.log(geo.fol.r_of_rho(grid.nodes[:, None, None]))
    return alpha, gamma1
