"""Curvature, residual, CMC, AVTD, and exponent-fit diagnostics.

Two independent curvature routes are kept deliberately: closed-form frame
combinations of the solved connection coefficients, and a generic
finite-difference Christoffel/Riemann assembly from the reconstructed
metric.  Their agreement is itself one of the reported checks.

Index conventions for the FD assembly (fixed here, used everywhere):
    dg[..., mu, nu, lam]        = d_lam g_{mu nu}
    Gamma[..., l, m, n]         = Gamma^l_{mn}
    dGamma[..., l, m, n, lam]   = d_lam Gamma^l_{mn}
    Riem[..., r, s, m, n]       = R^r_{s m n}
                                = d_m Gamma^r_{ns} - d_n Gamma^r_{ms}
                                + Gamma^r_{ml} Gamma^l_{ns}
                                - Gamma^r_{nl} Gamma^l_{ms}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .background import horizon_factor
from .grids import AngularGrid, RadialGrid, d_log_r, d_t, d_t4, d_theta, d_theta4
from .kasner import d1 as kasner_d1
from .kasner import d2 as kasner_d2

__all__ = [
    "DiagnosticsReport",
    "DiagnosticsError",
    "MetricFD",
    "frame_curvature",
    "kretschmann",
    "ricci_residual",
    "cmc_deviation",
    "exponent_consistency",
    "weyl3_check",
    "fit_loglog",
    "run_diagnostics",
]


class DiagnosticsError(RuntimeError):
    pass


def fit_loglog(r: np.ndarray, y: np.ndarray):
    """OLS slope of log y on log r; y may carry trailing angular axes.

    Returns (slope, r_squared) with the fit taken along the first axis.
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DiagnosticsError("log-log fit needs positive samples")
    lx = np.log(r)
    ly = np.log(y).reshape(r.size, -1)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = np.sum((ly - pred) ** 2, axis=0)
    ss_tot = np.sum((ly - ly.mean(axis=0)) ** 2, axis=0) + 1e-300
    r2 = 1.0 - ss_res / ss_tot
    shape = y.shape[1:]
    return (coef[0].reshape(shape) if shape else coef[0].item()), (r2.reshape(shape) if shape else r2.item())


# ---------------------------------------------------------------------------
# frame-route curvature
# ---------------------------------------------------------------------------


def frame_curvature(conn, grid: RadialGrid, fol=None, M: float = 1.0):
    """(R0101, R0202, R0102) histories from the connection coefficients."""
    rho3 = grid.nodes[:, None, None]
    if fol is None:
        r = np.broadcast_to(rho3, conn.K11.shape)
        w = np.ones_like(conn.K11)
    else:
        r = fol.r_of_rho(rho3)
        w = fol.w_of_r(r)
    sD = np.sqrt(horizon_factor(r, M))

    def e0(F):
        return -sD * w * d_log_r(F, grid.dx) / rho3

    K11, K22, K12 = conn.K11, conn.K22, conn.K12
    R0101 = -e0(K11) - K11**2 - 3.0 * K12**2
    R0202 = -e0(K22) - K22**2 + K12**2
    R0102 = -e0(K12) - 2.0 * K22 * K12
    return R0101, R0202, R0102


# ---------------------------------------------------------------------------
# generic finite-difference curvature
# ---------------------------------------------------------------------------


_RADIAL_STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


class MetricFD:
    """FD Christoffel/Riemann assembly on a metric history.

    components: dict name -> (values (n_r, nt, nth), (mu, nu) index pair).
    Component parity across the poles is (-1)^{number of Theta indices}.
    dim = 4 covers (rho, T, Theta, phi) with phi Killing; dim = 3 drops phi.
    """

    THETA_AXIS = 2

    def __init__(self, components: dict, grid: RadialGrid, ang: AngularGrid, chart=None, dim: int = 4):
        self.grid, self.ang, self.chart, self.dim = grid, ang, chart, dim
        self.comp = components
        self._gamma_cache: dict[int, np.ndarray] = {}
        self._g_cache: dict[int, tuple] = {}
        rho4 = grid.nodes[:, None, None]
        self._d_rho = {
            name: d_log_r(vals, grid.dx) / rho4 for name, (vals, _) in components.items()
        }
        # 4th-order chart Jacobians (the curvature tolerances need order 4)
        if chart is not None and not chart.is_identity:
            self._dT_dt = 1.0 + d_t4(chart.tau, ang.period_L)
            self._dt_dTheta = -d_theta4(chart.tau, "even", ang.dtheta) / self._dT_dt
        else:
            self._dT_dt = None
            self._dt_dTheta = None

    # -- angular derivatives with chart support and parity bookkeeping ------

    def _dA(self, F: np.ndarray, parity: str, which: int) -> np.ndarray:
        dt_f = d_t4(F, self.ang.period_L)
        if which == 1:
            return dt_f if self._dT_dt is None else dt_f / self._dT_dt
        dth_f = d_theta4(F, parity, self.ang.dtheta)
        if self._dt_dTheta is None:
            return dth_f
        return dth_f + self._dt_dTheta * dt_f

    @staticmethod
    def _parity_of(indices) -> str:
        n_theta_idx = sum(1 for i in indices if i == MetricFD.THETA_AXIS)
        return "odd" if n_theta_idx % 2 else "even"

    # -- metric, Christoffels ------------------------------------------------

    def metric_at(self, k: int):
        got = self._g_cache.get(k)
        if got is not None:
            return got
        d = self.dim
        shape = next(iter(self.comp.values()))[0].shape[1:]
        g = np.zeros(shape + (d, d))
        dg = np.zeros(shape + (d, d, d))
        for name, (vals, (a, b)) in self.comp.items():
            F = vals[k]
            g[..., a, b] = F
            g[..., b, a] = F
            par = self._parity_of((a, b))
            dF = [self._d_rho[name][k], self._dA(F, par, 1), self._dA(F, par, 2)]
            for lam in range(min(3, d)):
                dg[..., a, b, lam] = dF[lam]
                dg[..., b, a, lam] = dF[lam]
        out = (g, np.linalg.inv(g), dg)
        self._g_cache[k] = out
        return out

    def christoffel(self, k: int) -> np.ndarray:
        got = self._gamma_cache.get(k)
        if got is not None:
            return got
        g, ginv, dg = self.metric_at(k)
        # Gamma_{s m n} = 1/2 (d_m g_{sn} + d_n g_{sm} - d_s g_{mn})
        t1 = np.einsum("...snm->...smn", dg)
        t2 = dg  # dg[..., s, m, n] = d_n g_{sm}
        t3 = np.einsum("...mns->...smn", dg)
        Gamma_low = 0.5 * (t1 + t2 - t3)
        Gamma = np.einsum("...ls,...smn->...lmn", ginv, Gamma_low)
        self._gamma_cache[k] = Gamma
        return Gamma

    # -- Riemann at a node ----------------------------------------------------

    def riemann(self, k: int):
        """R^r_{smn} at node k; needs Christoffels on five consecutive nodes."""
        n = self.grid.n_r
        if n < 5:
            raise DiagnosticsError("radial FD stencil needs at least 5 slices")
        kk = int(np.clip(k, 2, n - 3))
        if kk != k:
            raise DiagnosticsError("riemann needs two neighbour slices on each side")
        Gammas = [self.christoffel(k + off) for off in (-2, -1, 0, 1, 2)]
        Gamma = Gammas[2]
        d = self.dim
        shape = Gamma.shape[:-3]
        dGamma = np.zeros(shape + (d, d, d, d))
        rad = sum(c * G for c, G in zip(_RADIAL_STENCIL, Gammas)) / (self.grid.dx * self.grid.nodes[k])
        dGamma[..., 0] = rad
        for l in range(d):
            for m in range(d):
                for nn in range(m, d):
                    par = self._parity_of((l, m, nn))
                    F = Gamma[..., l, m, nn]
                    dGamma[..., l, m, nn, 1] = self._dA(F, par, 1)
                    dGamma[..., l, m, nn, 2] = self._dA(F, par, 2)
                    if nn != m:
                        dGamma[..., l, nn, m, 1] = dGamma[..., l, m, nn, 1]
                        dGamma[..., l, nn, m, 2] = dGamma[..., l, m, nn, 2]
        # R^r_{smn} = d_m Gamma^r_{ns} - d_n Gamma^r_{ms} + G^r_{ml} G^l_{ns} - G^r_{nl} G^l_{ms}
        term1 = np.einsum("...rnsm->...rsmn", dGamma)
        term2 = np.einsum("...rmsn->...rsmn", dGamma)
        term3 = np.einsum("...rml,...lns->...rsmn", Gamma, Gamma)
        term4 = np.einsum("...rnl,...lms->...rsmn", Gamma, Gamma)
        return term1 - term2 + term3 - term4

    def kretschmann_at(self, k: int) -> np.ndarray:
        g, ginv, _ = self.metric_at(k)
        Riem = self.riemann(k)
        R_low = np.einsum("...ar,...rsmn->...asmn", g, Riem)
        R_up = np.einsum("...sb,...mc,...nd,...asmn->...abcd", ginv, ginv, ginv, Riem)
        return np.einsum("...asmn,...asmn->...", R_low, R_up)

    def ricci_at(self, k: int) -> np.ndarray:
        Riem = self.riemann(k)
        return np.einsum("...rsrn->...sn", Riem)

    def scalar_at(self, k: int) -> np.ndarray:
        _, ginv, _ = self.metric_at(k)
        Ric = self.ricci_at(k)
        return np.einsum("...sn,...sn->...", ginv, Ric)


def metric_components_3d(metric) -> dict:
    return {
        "g_rhorho": (metric.g_rhorho, (0, 0)),
        "g_rhoT": (metric.g_rhoT, (0, 1)),
        "g_rhoTheta": (metric.g_rhoTheta, (0, 2)),
        "g_TT": (metric.g_TT, (1, 1)),
        "g_TTheta": (metric.g_TTheta, (1, 2)),
        "g_ThetaTheta": (metric.g_ThetaTheta, (2, 2)),
    }


class WarpedCurvature:
    """Curvature of g = h + e^{2 gamma} dphi^2 via the circle-fiber split.

    The phi direction is Killing and its pole chain (cot Theta and
    1/sin^2 Theta from the axis) is carried in closed form:

        R_{a phi b phi} = -e^{2 gamma} P_ab,
        P_ab = Hess^h_ab(gamma) + d_a gamma d_b gamma,
        Kretschmann(g) = Kretschmann(h) + 4 P_ab P^{ab}.

    Only the smooth (rho, T, Theta) block goes through the generic FD
    assembly, so the axis cancellations are exact instead of resting on
    unresolved finite differences of cot Theta.
    """

    def __init__(self, metric, grid: RadialGrid, ang: AngularGrid, chart=None):
        self.grid, self.ang, self.chart = grid, ang, chart
        self.h = MetricFD(metric_components_3d(metric), grid, ang, chart, dim=3)
        rho3 = grid.nodes[:, None, None]
        sin = np.sin(ang.theta2d)[None]
        self.cot = (np.cos(ang.theta2d) / np.sin(ang.theta2d))[None]
        self.inv_sin2 = (1.0 / np.sin(ang.theta2d) ** 2)[None]
        # smooth rest part of gamma recovered from the stored g_phiphi
        self.u = 0.5 * np.log(metric.g_phiphi) - np.log(rho3) - np.log(sin)
        dx = grid.dx
        self.du_rho = d_log_r(self.u, dx) / rho3
        self.du_T = np.stack([self.h._dA(self.u[k], "even", 1) for k in range(grid.n_r)])
        self.du_Th = np.stack([self.h._dA(self.u[k], "even", 2) for k in range(grid.n_r)])
        self.d2u_rhorho = d_log_r(self.du_rho, dx) / rho3
        self.d2u_rhoT = d_log_r(self.du_T, dx) / rho3
        self.d2u_rhoTh = d_log_r(self.du_Th, dx) / rho3
        self.rho3 = rho3

    def P_at(self, k: int) -> np.ndarray:
        """P_ab = Hess_ab gamma + d_a gamma d_b gamma on slice k."""
        h = self.h
        rho = float(self.grid.nodes[k])
        cot, inv_sin2 = self.cot[0], self.inv_sin2[0]
        dg = np.stack(
            [self.du_rho[k] + 1.0 / rho, self.du_T[k], self.du_Th[k] + cot], axis=-1
        )
        dd = np.zeros(dg.shape[:-1] + (3, 3))
        dd[..., 0, 0] = self.d2u_rhorho[k] - 1.0 / rho**2
        dd[..., 0, 1] = dd[..., 1, 0] = self.d2u_rhoT[k]
        dd[..., 0, 2] = dd[..., 2, 0] = self.d2u_rhoTh[k]
        dd[..., 1, 1] = h._dA(self.du_T[k], "even", 1)
        dTTh = 0.5 * (h._dA(self.du_T[k], "even", 2) + h._dA(self.du_Th[k], "odd", 1))
        dd[..., 1, 2] = dd[..., 2, 1] = dTTh
        dd[..., 2, 2] = h._dA(self.du_Th[k], "odd", 2) - inv_sin2
        Gamma = h.christoffel(k)
        P = dd - np.einsum("...cab,...c->...ab", Gamma, dg) + np.einsum("...a,...b->...ab", dg, dg)
        return P

    def kretschmann_at(self, k: int) -> np.ndarray:
        g, ginv, _ = self.h.metric_at(k)
        Riem = self.h.riemann(k)
        R_low = np.einsum("...ar,...rsmn->...asmn", g, Riem)
        R_up = np.einsum("...sb,...mc,...nd,...asmn->...abcd", ginv, ginv, ginv, Riem)
        K_h = np.einsum("...asmn,...asmn->...", R_low, R_up)
        P = self.P_at(k)
        P_up = np.einsum("...ac,...bd,...cd->...ab", ginv, ginv, P)
        return K_h + 4.0 * np.einsum("...ab,...ab->...", P, P_up)


def kretschmann(metric, grid: RadialGrid, ang: AngularGrid, chart=None, nodes=None) -> tuple:
    """Riemann-squared invariant by the FD route (warped circle split).

    Returns (node_indices, values).  The radial stencil needs two
    neighbours on each side, so the ends are excluded.
    """
    wc = WarpedCurvature(metric, grid, ang, chart)
    if nodes is None:
        nodes = np.arange(2, grid.n_r - 2)
    nodes = np.asarray(nodes, dtype=int)
    vals = np.stack([wc.kretschmann_at(int(k)) for k in nodes], axis=0)
    return nodes, vals


# ---------------------------------------------------------------------------
# residual diagnostics
# ---------------------------------------------------------------------------


def ricci_residual(state, geo=None, nodes=None) -> dict:
    """Self-consistent residuals of the reduced system on an iterate.

    The connection equations and the wave equation are re-evaluated with the
    iterate's own geometry (their defect measures distance from the coupled
    fixed point plus discretization), and the scalar-curvature residual of
    the projected metric is computed by the FD route.  All residuals are
    reported relative to the frame curvature scale max |R_{0i0j}|.
    """
    from .riccati import hessian_forcing

    if geo is None:
        geo = state.geometry()
    grid, ang = state.grid, state.ang
    conn, wave = state.conn, state.wave
    forcing = hessian_forcing(geo, wave)
    rho3 = grid.nodes[:, None, None]
    r = state.fol.r_of_rho(rho3)
    w = state.fol.w_of_r(r)
    sD = np.sqrt(horizon_factor(r, state.M))

    def e0(F):
        return -sD * w * d_log_r(F, grid.dx) / rho3

    v = wave.e0_gamma
    res11 = e0(conn.K11) + conn.K11**2 + 3.0 * conn.K12**2 + v * conn.K11 - forcing.H11
    res22 = e0(conn.K22) + conn.K22**2 - conn.K12**2 + v * conn.K22 - forcing.H22
    res12 = e0(conn.K12) + (2.0 * conn.K22 + v) * conn.K12 - forcing.H12
    # wave residual: e0 v + trK v - S = 0 with S from the Hessian bundle sum
    res_wave = np.empty_like(v)
    e0v = e0(v)
    for k in range(grid.n_r):
        c = geo.slice_cache(k)
        bundle = geo.hessian_bundle(c, wave.u[k], wave.v_u[k], e0v[k] - c.e0_v_ref)
        res_wave[k] = e0v[k] + conn.trK[k] * v[k] - bundle["diag_sum"]

    R0101, R0202, R0102 = frame_curvature(conn, grid, state.fol, state.M)
    scale = np.maximum(np.abs(R0101), np.abs(R0202))
    scale = np.maximum(scale, np.abs(R0102)) + 1e-300

    if nodes is None:
        nodes = np.arange(2, grid.n_r - 2, max(1, grid.n_r // 80))
    h3 = MetricFD(
        {
            "g_rhorho": (state.metric.g_rhorho, (0, 0)),
            "g_rhoT": (state.metric.g_rhoT, (0, 1)),
            "g_rhoTheta": (state.metric.g_rhoTheta, (0, 2)),
            "g_TT": (state.metric.g_TT, (1, 1)),
            "g_TTheta": (state.metric.g_TTheta, (1, 2)),
            "g_ThetaTheta": (state.metric.g_ThetaTheta, (2, 2)),
        },
        grid,
        ang,
        state.chart,
        dim=3,
    )
    Rh = np.stack([h3.scalar_at(int(k)) for k in nodes], axis=0)

    rel = lambda res: np.max(np.abs(res) / scale, axis=(1, 2))
    return {
        "nodes": np.arange(grid.n_r),
        "riccati_11_rel": rel(res11),
        "riccati_22_rel": rel(res22),
        "riccati_12_rel": rel(res12),
        "wave_rel": rel(res_wave),
        "scalar_nodes": nodes,
        "scalar_Rh_rel": np.max(np.abs(Rh) / scale[nodes], axis=(1, 2)),
    }


def weyl3_check(metric, grid: RadialGrid, ang: AngularGrid, chart=None, nodes=None) -> dict:
    """Dimension identity of 3-metrics and the scalar-flatness residual.

    In three dimensions the Riemann tensor is algebraically determined by
    the Ricci tensor; the identity holds for any metric and its FD residual
    is pure discretization.  R(h) = 0, by contrast, holds only on solutions
    of the reduced system.
    """
    comp = {
        "g_rhorho": (metric.g_rhorho, (0, 0)),
        "g_rhoT": (metric.g_rhoT, (0, 1)),
        "g_rhoTheta": (metric.g_rhoTheta, (0, 2)),
        "g_TT": (metric.g_TT, (1, 1)),
        "g_TTheta": (metric.g_TTheta, (1, 2)),
        "g_ThetaTheta": (metric.g_ThetaTheta, (2, 2)),
    }
    fd = MetricFD(comp, grid, ang, chart, dim=3)
    if nodes is None:
        nodes = np.arange(2, grid.n_r - 2, max(1, grid.n_r // 40))
    id_res, rh_res = [], []
    for k in nodes:
        k = int(k)
        g, ginv, _ = fd.metric_at(k)
        Riem = fd.riemann(k)
        R_low = np.einsum("...ar,...rsmn->...asmn", g, Riem)
        Ric = fd.ricci_at(k)
        R = np.einsum("...sn,...sn->...", ginv, Ric)
        ric_mixed = np.einsum("...as,...sn->...an", ginv, Ric)
        # 2 (g_{a[m} R_{n]d} - g_{d[m} R_{n]a}) - R g_{a[m} g_{n]d}
        gam = np.einsum("...am,...nd->...admn", g, Ric)
        gan = np.einsum("...an,...md->...admn", g, Ric)
        gdm = np.einsum("...dm,...na->...admn", g, Ric)
        gdn = np.einsum("...dn,...ma->...admn", g, Ric)
        ggm = np.einsum("...am,...nd->...admn", g, g)
        ggn = np.einsum("...an,...md->...admn", g, g)
        built = (gam - gan) - (gdm - gdn) - 0.5 * R[..., None, None, None, None] * (ggm - ggn)
        scale = np.max(np.abs(R_low)) + 1e-300
        id_res.append(float(np.max(np.abs(R_low - built)) / scale))
        ric_scale = np.max(np.abs(ric_mixed)) + 1e-300
        rh_res.append(float(np.max(np.abs(R)) / ric_scale))
    return {"nodes": np.asarray(nodes), "identity_rel": np.array(id_res), "scalar_rel": np.array(rh_res)}


# ---------------------------------------------------------------------------
# CMC / exponents
# ---------------------------------------------------------------------------


def cmc_deviation(conn, grid: RadialGrid, fol=None, M: float = 1.0) -> dict:
    """Spatial spread of r^{3/2} trK per slice, its decay fit, and the mean."""
    rho3 = grid.nodes[:, None, None]
    r = rho3 if fol is None else fol.r_of_rho(rho3)
    trKw = conn.trK * r**1.5
    mean = trKw.mean(axis=(1, 2))
    std = trKw.std(axis=(1, 2))
    dev = std / np.abs(mean)
    mask = grid.nodes <= 10.0 * grid.r_min
    slope, r2 = fit_loglog(grid.nodes[mask], np.maximum(dev[mask], 1e-300))
    return {
        "deviation": dev,
        "mean": mean,
        "decay_exponent": float(slope),
        "r_squared": float(r2),
        "mean_at_rmin": float(mean[-1]),
        "target_mean": -1.5 * np.sqrt(2.0 * M),
    }


def exponent_consistency(state, window_decades: float = 1.0) -> dict:
    """Pointwise fitted slopes of the metric components against the maps.

    Fits log g_phiphi, log g_ThetaTheta, log g_TT over the last decade(s)
    and compares with 2 alpha, -2 d2(alpha), -2 d1(alpha).
    """
    grid = state.grid
    a = state.wave.alpha.values
    mask = grid.nodes <= grid.r_min * 10.0**window_decades
    r = grid.nodes[mask]
    out = {}
    targets = {
        "g_phiphi": (state.metric.g_phiphi, 2.0 * a),
        "g_ThetaTheta": (state.metric.g_ThetaTheta, -2.0 * kasner_d2(a)),
        "g_TT": (state.metric.g_TT, -2.0 * kasner_d1(a)),
    }
    worst = 0.0
    for name, (compv, pred) in targets.items():
        slope, r2 = fit_loglog(r, compv[mask])
        mism = np.abs(slope - pred) / np.abs(pred)
        out[name] = {
            "slope": slope,
            "predicted": pred,
            "max_rel_mismatch": float(np.max(mism)),
            "min_r_squared": float(np.min(r2)),
            "flagged": bool(np.min(r2) < 0.98),
        }
        worst = max(worst, float(np.max(mism)))
    out["max_mismatch"] = worst
    return out


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    kretschmann_nodes: np.ndarray
    kretschmann: np.ndarray
    kretschmann_slope: float
    kretschmann_slope_r2: float
    blowup_exponent_field: np.ndarray  # pointwise slope, reported ungated
    frame_R0101_slope: float
    dual_route_rel: float
    cmc: dict
    exponents: dict
    residuals: dict
    weyl: dict
    avtd_exponent: float


def run_diagnostics(state, geo=None, fast: bool = False) -> DiagnosticsReport:
    """Assemble the full diagnostic sweep for one iterate."""
    grid, ang = state.grid, state.ang
    if geo is None:
        geo = state.geometry()
    mask = grid.nodes <= 10.0 * grid.r_min
    fit_nodes = np.where(mask)[0]
    fit_nodes = fit_nodes[(fit_nodes >= 2) & (fit_nodes <= grid.n_r - 3)]
    if fast:
        fit_nodes = fit_nodes[:: max(1, fit_nodes.size // 12)]

    nodes, Kvals = kretschmann(state.metric, grid, ang, state.chart, nodes=fit_nodes)
    r_fit = state.fol.r_of_rho(grid.nodes[nodes][:, None, None])[:, 0, 0]
    k_slope_field, k_r2 = fit_loglog(r_fit, Kvals)
    k_mean_slope, k_mean_r2 = fit_loglog(r_fit, Kvals.mean(axis=(1, 2)))

    R0101, R0202, R0102 = frame_curvature(state.conn, grid, state.fol, state.M)
    fr_slope, _ = fit_loglog(grid.nodes[mask], np.abs(R0101[mask]).mean(axis=(1, 2)))

    # dual-route agreement at a mid radius
    k_mid = int(np.argmin(np.abs(grid.nodes - np.sqrt(grid.epsilon * grid.r_min))))
    k_mid = int(np.clip(k_mid, 2, grid.n_r - 3))
    fd = MetricFD(metric_components_3d(state.metric), grid, ang, state.chart, dim=3)
    Riem = fd.riemann(k_mid)
    g, _, _ = fd.metric_at(k_mid)
    R_low = np.einsum("...ar,...rsmn->...asmn", g, Riem)
    e0c, e1c, e2c = _frame_vectors_3d(state, geo, k_mid)
    R0101_fd = _contract4(R_low, e0c, e1c, e0c, e1c)
    rel = np.max(np.abs(R0101_fd - R0101[k_mid]) / np.abs(R0101[k_mid]))

    kin, spa = state.wave.energies[:, 0], state.wave.energies[:, 1]
    ratio = spa[mask] / np.maximum(kin[mask], 1e-300)
    avtd_slope, _ = fit_loglog(grid.nodes[mask], np.maximum(ratio, 1e-300))

    return DiagnosticsReport(
        kretschmann_nodes=nodes,
        kretschmann=Kvals,
        kretschmann_slope=float(k_mean_slope),
        kretschmann_slope_r2=float(k_mean_r2),
        blowup_exponent_field=k_slope_field,
        frame_R0101_slope=float(fr_slope),
        dual_route_rel=float(rel),
        cmc=cmc_deviation(state.conn, grid, state.fol, state.M),
        exponents=exponent_consistency(state),
        residuals=ricci_residual(state, geo),
        weyl=weyl3_check(state.metric, grid, ang, state.chart),
        avtd_exponent=float(avtd_slope),
    )


def _frame_vectors_3d(state, geo, k):
    c = geo.slice_cache(k)
    zeros = np.zeros_like(c.P)
    e0c = np.stack([-c.P, zeros, zeros], axis=-1)
    e1c = np.stack([c.mu1 * c.P, c.inv_1T, c.inv_1Th], axis=-1)
    e2c = np.stack([c.mu2 * c.P, zeros, c.inv_2Th], axis=-1)
    return e0c, e1c, e2c


def _contract4(R_low, a, b, c, d):
    return np.einsum("...asmn,...a,...s,...m,...n->...", R_low, a, b, c, d)
