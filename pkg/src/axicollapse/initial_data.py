"""Perturbed initial data, frame-rotation algebra, and the 2x2 matching solve.

The data live on the sphere-cylinder (t, theta) at radius ~ epsilon: a
spatial metric diag(g_tt, g_thth, e^{2 gamma}) plus a diagonal second
fundamental form, all eta-close to the Schwarzschild slice.  The matching
problem determines where that surface sits in the evolved gauge: the graph
r_*(t, theta) and the rotation datum Ktilde12 that aligns the evolved
frame with the data frame, solved by damped Newton with a colored
finite-difference Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .background import SchwarzschildParams, horizon_factor, schw_connection, schw_gamma
from .grids import AngularGrid, ScalarHistory, ScalarSlice, d_t, d_theta, slice_norm

__all__ = [
    "ModeSpec",
    "AbstractData",
    "MatchingSolution",
    "MatchingError",
    "DataBoundError",
    "make_perturbed_data",
    "default_modes",
    "phi_from_K12",
    "cos_sin_phi",
    "F11_F22",
    "F1_F2",
    "Atilde_fields",
    "tilde_frame_derivative",
    "solve_matching",
    "K11_init_on_sigma",
    "a_init_on_sigma",
    "constraint_residual",
    "interp_history_at",
]


class MatchingError(RuntimeError):
    pass


class DataBoundError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeSpec:
    """One smooth perturbation mode: amp cos(2 pi k_t t / L + phase) sin^2(th) cos^p(th).

    The sin^2 factor keeps the axis elementary-flat (perturbations die at the
    poles), and the cos-power basis is smooth on the sphere.
    """

    target: str  # gamma | nu_gamma | g_tt | g_theta_theta | K11 | K22
    k_t: int = 1
    p_theta: int = 0
    amp: float = 0.5
    phase: float = 0.0

    _TARGETS = ("gamma", "nu_gamma", "g_tt", "g_theta_theta", "K11", "K22")

    def __post_init__(self):
        if self.target not in self._TARGETS:
            raise DataBoundError(f"unknown perturbation target {self.target!r}")

    def evaluate(self, ang: AngularGrid) -> np.ndarray:
        t2, th2 = ang.t2d, ang.theta2d
        raw = np.cos(2.0 * np.pi * self.k_t * t2 / ang.period_L + self.phase)
        raw = raw * np.sin(th2) ** 2 * np.cos(th2) ** self.p_theta
        nrm = slice_norm(raw, "L2_sin", ang)
        return self.amp * raw / nrm


def default_modes(seed: int | None = None) -> list[ModeSpec]:
    """A generic smooth excitation touching every data field."""
    phases = [0.3, 1.1, 2.0, 0.5, 2.4, 0.9, 1.7]
    if seed is not None:
        rng = np.random.default_rng(seed)
        phases = list(rng.uniform(0.0, 2.0 * np.pi, size=7))
    return [
        ModeSpec("gamma", 1, 0, 0.7, phases[0]),
        ModeSpec("nu_gamma", 1, 0, 0.8, phases[1]),
        ModeSpec("nu_gamma", 2, 1, 0.35, phases[2]),
        ModeSpec("g_tt", 1, 1, 0.5, phases[3]),
        ModeSpec("g_theta_theta", 1, 0, 0.4, phases[4]),
        ModeSpec("K11", 1, 0, 0.45, phases[5]),
        ModeSpec("K22", 2, 0, 0.4, phases[6]),
    ]


@dataclass
class AbstractData:
    """Metric and second fundamental form induced on the initial sphere-cylinder."""

    params: SchwarzschildParams
    ang: AngularGrid
    eta: float
    gbold_tt: ScalarSlice
    gbold_thetatheta: ScalarSlice
    Kbold_11: ScalarSlice
    Kbold_22: ScalarSlice
    Kbold_33: ScalarSlice  # = nu_gamma component of K
    gamma_init: ScalarSlice
    nu_gamma_init: ScalarSlice

    def __post_init__(self):
        if np.any(self.gbold_tt.values <= 0) or np.any(self.gbold_thetatheta.values <= 0):
            raise DataBoundError("metric components must be positive")

    @property
    def M(self) -> float:
        return self.params.M

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    @property
    def delta_K(self) -> np.ndarray:
        """K22 - K11 of the data; bounded away from zero near Schwarzschild."""
        return self.Kbold_22.values - self.Kbold_11.values

    # spatial connection coefficients of the background frame E1, E2
    @property
    def A112(self) -> np.ndarray:
        gtt, gthth = self.gbold_tt.values, self.gbold_thetatheta.values
        return -0.5 * d_theta(gtt, "even", self.ang.dtheta) / (gtt * np.sqrt(gthth))

    @property
    def A221(self) -> np.ndarray:
        gtt, gthth = self.gbold_tt.values, self.gbold_thetatheta.values
        return -0.5 * d_t(gthth, self.ang.period_L) / (gthth * np.sqrt(gtt))


def _schwarzschild_data(params: SchwarzschildParams, ang: AngularGrid) -> dict:
    M, eps = params.M, params.epsilon
    D = horizon_factor(eps, M)
    K11, K22, K33 = schw_connection(eps, M)
    ones = np.ones((ang.n_t, ang.n_theta))
    return {
        "g_tt": D * ones,
        "g_theta_theta": eps**2 * ones,
        "K11": K11 * ones,
        "K22": K22 * ones,
        "K33": K33 * ones,
        "gamma": schw_gamma(eps, ang.theta2d) * ones,
        "nu_gamma": K33 * ones,
    }


def make_perturbed_data(
    params: SchwarzschildParams,
    ang: AngularGrid,
    eta: float,
    modes: list[ModeSpec] | None = None,
    bound_slack: float = 200.0,
) -> AbstractData:
    """Schwarzschild slice data plus eta-scaled smooth perturbations.

    Metric components are perturbed in the log (stays positive); K
    components at the curvature scale sqrt(2M) eps^{-3/2}.  Discrete
    closeness norms through 4 derivatives are validated against eta.
    """
    if eta < 0:
        raise DataBoundError("eta must be nonnegative")
    if modes is None:
        modes = default_modes()
    base = _schwarzschild_data(params, ang)
    eps, M = params.epsilon, params.M
    k_scale = np.sqrt(2.0 * M) * eps ** (-1.5)

    pert = {k: np.zeros((ang.n_t, ang.n_theta)) for k in base}
    for m in modes:
        f = m.evaluate(ang)
        if m.target == "gamma":
            pert["gamma"] += eta * f
        elif m.target == "nu_gamma":
            pert["nu_gamma"] += eta * k_scale * f
        elif m.target == "g_tt":
            pert["g_tt"] += eta * f
        elif m.target == "g_theta_theta":
            pert["g_theta_theta"] += eta * f
        elif m.target == "K11":
            pert["K11"] += eta * k_scale * f
        elif m.target == "K22":
            pert["K22"] += eta * k_scale * f

    g_tt = base["g_tt"] * np.exp(pert["g_tt"])
    g_thth = base["g_theta_theta"] * np.exp(pert["g_theta_theta"])
    gamma = base["gamma"] + pert["gamma"]
    nu_gamma = base["nu_gamma"] + pert["nu_gamma"]
    K11 = base["K11"] + pert["K11"]
    K22 = base["K22"] + pert["K22"]

    data = AbstractData(
        params,
        ang,
        eta,
        ScalarSlice(g_tt, eps, "even"),
        ScalarSlice(g_thth, eps, "even"),
        ScalarSlice(K11, eps, "even"),
        ScalarSlice(K22, eps, "even"),
        ScalarSlice(nu_gamma, eps, "even"),
        ScalarSlice(gamma, eps, "even"),
        ScalarSlice(nu_gamma, eps, "even"),
    )
    _validate_bounds(data, base, bound_slack)
    return data


def _derivative_norms(f: np.ndarray, ang: AngularGrid, orders: int = 4) -> list[float]:
    """L2(sin) norms of f and its t/theta derivatives through `orders`."""
    out = [slice_norm(f, "L2_sin", ang)]
    level = {(0, 0): (f, "even")}
    for _ in range(orders):
        nxt = {}
        worst = 0.0
        for (kt, kth), (g, par) in level.items():
            gt = d_t(g, ang.period_L)
            nxt[(kt + 1, kth)] = (gt, par)
            gth = d_theta(g, par, ang.dtheta)
            nxt[(kt, kth + 1)] = (gth, "odd" if par == "even" else "even")
        for g, _ in nxt.values():
            worst = max(worst, slice_norm(g, "L2_sin", ang))
        out.append(worst)
        level = nxt
    return out


def _validate_bounds(data: AbstractData, base: dict, slack: float):
    """Discrete analogues of the closeness requirements, with a slack factor."""
    eps, M, eta = data.epsilon, data.M, data.eta
    ang = data.ang
    log_eps = abs(np.log(eps))
    k_scale = np.sqrt(2.0 * M) * eps ** (-1.5)
    checks = {
        "gamma_init - gamma_S": (data.gamma_init.values - base["gamma"], eta * log_eps),
        "log(g_tt / g_tt_S)": (np.log(data.gbold_tt.values / base["g_tt"]), eta * log_eps),
        "log(g_thth / g_thth_S)": (
            np.log(data.gbold_thetatheta.values / base["g_theta_theta"]),
            eta * log_eps,
        ),
        "K11 - K11_S": ((data.Kbold_11.values - base["K11"]) / k_scale, eta),
        "K22 - K22_S": ((data.Kbold_22.values - base["K22"]) / k_scale, eta),
        "nu_gamma - K33_S": ((data.nu_gamma_init.values - base["nu_gamma"]) / k_scale, eta),
    }
    for name, (f, bound) in checks.items():
        if eta == 0.0:
            if np.max(np.abs(f)) > 1e-13:
                raise DataBoundError(f"eta=0 data must be exactly Schwarzschild; {name} is not")
            continue
        norms = _derivative_norms(f, ang)
        for k, val in enumerate(norms):
            if val > slack * bound:
                raise DataBoundError(
                    f"closeness bound violated for {name} at derivative order {k}: "
                    f"{val:.3e} > {slack:.0f} * {bound:.3e}"
                )


# ---------------------------------------------------------------------------
# rotation algebra
# ---------------------------------------------------------------------------


def cos_sin_phi(x: np.ndarray):
    """cos(phi), sin(phi) for the rotation angle with sin(2 phi) = 2 x.

    Stable forms: no cancellation at small x, valid for |x| <= 1/2.
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 0.5 + 1e-14):
        raise MatchingError("rotation ratio |Ktilde12 / (K22 - K11)| exceeds 1/2")
    S = np.sqrt(np.clip(1.0 - 4.0 * x * x, 0.0, None))
    cphi = np.sqrt(0.5 * (1.0 + S))
    sphi = x * np.sqrt(2.0 / (1.0 + S))
    return cphi, sphi


def phi_from_K12(ktilde12: np.ndarray, delta_K: np.ndarray) -> np.ndarray:
    """phi = asin(2 Ktilde12 / (K22 - K11)) / 2."""
    arg = 2.0 * np.asarray(ktilde12, dtype=float) / np.asarray(delta_K, dtype=float)
    if np.any(np.abs(arg) > 1.0):
        raise MatchingError("phi_from_K12 argument outside [-1, 1]")
    return 0.5 * np.arcsin(arg)


def rotate_K(phi: np.ndarray, K11: np.ndarray, K22: np.ndarray, K12: np.ndarray = 0.0):
    """Second fundamental form components in the phi-rotated frame."""
    c, s = np.cos(phi), np.sin(phi)
    k11 = c * c * K11 + s * s * K22 + 2.0 * s * c * K12
    k22 = s * s * K11 + c * c * K22 - 2.0 * s * c * K12
    k12 = K12 * (c * c - s * s) + s * c * (K22 - K11)
    return k11, k22, k12


def F11_F22(ktilde12: np.ndarray, data: AbstractData):
    """(Ktilde11, Ktilde22) as explicit convex combinations of the data eigenvalues."""
    dK = data.delta_K
    x = np.asarray(ktilde12, dtype=float) / dK
    if np.any(np.abs(x) > 0.5 + 1e-14):
        raise MatchingError("F11/F22 ratio outside the admissible band")
    S = np.sqrt(np.clip(1.0 - 4.0 * x * x, 0.0, None))
    K11, K22 = data.Kbold_11.values, data.Kbold_22.values
    f11 = 0.5 * (1.0 + S) * K11 + 0.5 * (1.0 - S) * K22
    f22 = 0.5 * (1.0 + S) * K22 + 0.5 * (1.0 - S) * K11
    return f11, f22


def F1_F2(x: np.ndarray, data: AbstractData):
    """Algebraic parts of the rotated spatial connection coefficients."""
    c, s = cos_sin_phi(x)
    A112, A221 = data.A112, data.A221
    F1 = c * A112 - s * A221
    F2 = c * A221 + s * A112
    return F1, F2


def tilde_frame_derivative(
    which: int,
    f: np.ndarray,
    parity: str,
    data: AbstractData,
    ktilde12: np.ndarray,
) -> np.ndarray:
    """Apply the rotated tangent frame field (1 or 2) to a gridded function."""
    ang = data.ang
    x = np.asarray(ktilde12, dtype=float) / data.delta_K
    c, s = cos_sin_phi(x)
    inv_sq_tt = 1.0 / np.sqrt(data.gbold_tt.values)
    inv_sq_th = 1.0 / np.sqrt(data.gbold_thetatheta.values)
    ft = d_t(f, ang.period_L)
    fth = d_theta(f, parity, ang.dtheta)
    if which == 1:
        return c * inv_sq_tt * ft + s * inv_sq_th * fth
    if which == 2:
        return c * inv_sq_th * fth - s * inv_sq_tt * ft
    raise MatchingError("frame index must be 1 or 2")


def Atilde_fields(ktilde12: np.ndarray, data: AbstractData):
    """(Atilde_112, Atilde_221): derivative plus algebraic rotation parts."""
    dK = data.delta_K
    x = np.asarray(ktilde12, dtype=float) / dK
    S = np.sqrt(np.clip(1.0 - 4.0 * x * x, 0.0, None))
    if np.any(S <= 0):
        raise MatchingError("Atilde evaluation at the degenerate rotation edge")
    # x is odd across the poles (Ktilde12 odd, delta_K even)
    e1x = tilde_frame_derivative(1, x, "odd", data, ktilde12)
    e2x = tilde_frame_derivative(2, x, "odd", data, ktilde12)
    F1, F2 = F1_F2(x, data)
    return e1x / S + F1, e2x / S + F2


# ---------------------------------------------------------------------------
# matching solve
# ---------------------------------------------------------------------------


@dataclass
class MatchingSolution:
    r_star: ScalarSlice
    Ktilde12: ScalarSlice
    Ktilde11: np.ndarray
    Ktilde22: np.ndarray
    Atilde_112: np.ndarray
    Atilde_221: np.ndarray
    q: np.ndarray
    phi: np.ndarray
    e2tilde_rstar: np.ndarray
    newton_trace: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.q < 1.0 - 1e-12):
            raise MatchingError("q must be >= 1")
        if np.any(np.abs(self.phi) >= np.pi / 4):
            raise MatchingError("rotation angle left the |phi| < pi/4 band")


def interp_history_at(hist: ScalarHistory, r_targets: np.ndarray) -> np.ndarray:
    """Lagrange-cubic interpolation of a history at per-point radii (log spacing)."""
    radii = hist.radii
    x = np.log(radii)
    hx = x[1] - x[0]
    xt = np.log(np.asarray(r_targets, dtype=float))
    s = (xt - x[0]) / hx
    if np.any(s < -1e-9) or np.any(s > radii.size - 1 + 1e-9):
        raise MatchingError("interpolation target outside the stored radial range")
    i0 = np.clip(np.floor(s).astype(int) - 1, 0, radii.size - 4)
    u = s - i0
    vals = hist.values
    nt, nth = vals.shape[1], vals.shape[2]
    ii, jj = np.meshgrid(np.arange(nt), np.arange(nth), indexing="ij")
    f = [vals[i0 + m, ii, jj] for m in range(4)]
    l0 = -(u - 1) * (u - 2) * (u - 3) / 6.0
    l1 = u * (u - 2) * (u - 3) / 2.0
    l2 = -u * (u - 1) * (u - 3) / 2.0
    l3 = u * (u - 1) * (u - 2) / 6.0
    return l0 * f[0] + l1 * f[1] + l2 * f[2] + l3 * f[3]


class _MatchingResidual:
    """Scaled residual of the two matching equations on the angular grid."""

    def __init__(self, k22_hist, k12_hist, data: AbstractData, label_of_r):
        self.k22 = k22_hist
        self.k12 = k12_hist
        self.data = data
        self.label_of_r = label_of_r  # maps physical r to the stored radius label
        M, eps = data.M, data.epsilon
        self.s_unk_r = 1.0 / eps
        self.s_unk_k = eps**1.5 / np.sqrt(2.0 * M)
        self.s_res = eps**1.5 / np.sqrt(2.0 * M)

    def pack(self, r_star, ktilde12):
        return np.concatenate(
            [((r_star - self.data.epsilon) * self.s_unk_r).ravel(), (ktilde12 * self.s_unk_k).ravel()]
        )

    def unpack(self, z):
        n = z.size // 2
        shape = (self.data.ang.n_t, self.data.ang.n_theta)
        r_star = self.data.epsilon + (z[:n] / self.s_unk_r).reshape(shape)
        ktilde12 = (z[n:] / self.s_unk_k).reshape(shape)
        return r_star, ktilde12

    def __call__(self, z):
        data = self.data
        r_star, kt12 = self.unpack(z)
        M = data.M
        D = horizon_factor(r_star, M)
        if np.any(D <= 0):
            raise MatchingError("candidate r_star left the interior")
        e2_rs = tilde_frame_derivative(2, r_star, "even", data, kt12)
        e2e2_rs = tilde_frame_derivative(2, e2_rs, "odd", data, kt12)
        q = np.sqrt(1.0 + (e2_rs**2) / D)
        labels = self.label_of_r(r_star)
        K22_at = interp_history_at(self.k22, labels)
        K12_at = interp_history_at(self.k12, labels)
        _, F22 = F11_F22(kt12, data)
        _, A221 = Atilde_fields(kt12, data)
        R1 = (
            q * q * K22_at
            - q * F22
            - e2e2_rs / np.sqrt(D)
            - (2.0 * M / r_star**2) * e2_rs**2 / D**1.5
        )
        R2 = kt12 + (e2_rs * A221) / (q * np.sqrt(D)) - K12_at
        return np.concatenate([(R1 * self.s_res).ravel(), (R2 * self.s_res).ravel()])

    def norm(self, res):
        ang = self.data.ang
        w = (ang.sin_theta * ang.dt * ang.dtheta).ravel()
        half = res.size // 2
        return float(np.sqrt(np.sum((res[:half] ** 2 + res[half:] ** 2) * w)))


def _color_stride(n: int, minimum: int = 5) -> int:
    """Smallest divisor of n that is >= minimum (n itself as fallback).

    On the periodic t-axis the stride must divide n, or same-color points
    could sit closer than the stencil diameter across the wrap.
    """
    for s in range(minimum, n):
        if n % s == 0:
            return s
    return n


def _colored_jacobian(resfun, z, res0, n_t, n_theta, step=1e-7):
    """Sparse FD Jacobian via simultaneous perturbation of well-separated unknowns.

    The matching residual at a grid point depends on unknowns within a
    radius-2 angular stencil (two nested first-derivative applications,
    pole mirrors included), so colored points spaced >= 5 apart never
    interfere and each residual row is attributed to the unique colored
    column within reach.
    """
    n = n_t * n_theta
    s_t = _color_stride(n_t, 5)
    s_th = 5 if n_theta >= 5 else n_theta
    tt = np.arange(n_t)[:, None]
    th = np.arange(n_theta)[None, :]
    rows, cols, vals = [], [], []
    for block in (0, 1):
        for ct in range(s_t):
            for cth in range(s_th):
                colored = ((tt % s_t) == ct) & ((th % s_th) == cth)
                if not colored.any():
                    continue
                dz = np.zeros_like(z)
                dz[block * n : (block + 1) * n][colored.ravel()] = step
                diff = (resfun(z + dz) - res0) / step
                # attribute each residual row to its unique in-reach column
                dt = (tt - ct) % s_t
                dt_c = np.where(dt <= s_t // 2, dt, dt - s_t)
                t_src = (tt - dt_c) % n_t
                reach_t = np.abs(dt_c) <= 2
                dth = (th - cth) % s_th
                dth_c = np.where(dth <= s_th // 2, dth, dth - s_th)
                th_src = th - dth_c
                reach_th = (np.abs(dth_c) <= 2) & (th_src >= 0) & (th_src < n_theta)
                reach = np.broadcast_to(reach_t & reach_th, (n_t, n_theta))
                col2d = t_src * n_theta + np.clip(th_src, 0, n_theta - 1)
                col2d = np.broadcast_to(col2d, (n_t, n_theta))
                rflat = np.where(reach.ravel())[0]
                cflat = col2d.ravel()[rflat] + block * n
                for rblock in (0, 1):
                    rr = rflat + rblock * n
                    vv = diff[rr]
                    keep = vv != 0.0
                    rows.extend(rr[keep])
                    cols.extend(cflat[keep])
                    vals.extend(vv[keep])
    return sp.csr_matrix((vals, (rows, cols)), shape=(z.size, z.size))


def solve_matching(
    k22_hist: ScalarHistory,
    k12_hist: ScalarHistory,
    data: AbstractData,
    label_of_r=None,
    r_star0: np.ndarray | None = None,
    ktilde0: np.ndarray | None = None,
    max_iter: int = 20,
    tol: float = 1e-10,
) -> MatchingSolution:
    """Damped Newton on the discretized matching system.

    label_of_r maps a physical radius to the label used by the stored
    histories (identity when histories are labeled by r itself).
    """
    if label_of_r is None:
        label_of_r = lambda r: r
    ang = data.ang
    eps = data.epsilon
    resfun = _MatchingResidual(k22_hist, k12_hist, data, label_of_r)
    r_star = np.full((ang.n_t, ang.n_theta), eps) if r_star0 is None else np.array(r_star0, dtype=float)
    kt12 = np.zeros((ang.n_t, ang.n_theta)) if ktilde0 is None else np.array(ktilde0, dtype=float)
    z = resfun.pack(r_star, kt12)
    res = resfun(z)
    rnorm = resfun.norm(res)
    trace = [{"iter": 0, "residual": rnorm, "damping": 1.0}]
    it = 0
    while rnorm > tol:
        if it >= max_iter:
            raise MatchingError(
                f"Newton failed to converge in {max_iter} iterations; trace: "
                + ", ".join(f"{t['residual']:.3e}" for t in trace)
            )
        J = _colored_jacobian(resfun, z, res, ang.n_t, ang.n_theta)
        try:
            dz = spla.spsolve(J.tocsc(), -res)
        except Exception as exc:  # singular Jacobian
            raise MatchingError(f"matching Jacobian solve failed: {exc}") from exc
        lam = 1.0
        while True:
            z_new = z + lam * dz
            r_new, _ = resfun.unpack(z_new)
            if np.max(np.abs(r_new - eps)) > eps / 8.0:
                raise MatchingError("Newton iterate left the |r_* - eps| <= eps/8 ball")
            res_new = resfun(z_new)
            rnorm_new = resfun.norm(res_new)
            if rnorm_new <= (1.0 - 0.25 * lam) * rnorm or lam < 1.0 / 64.0:
                break
            lam *= 0.5
        z, res, rnorm = z_new, res_new, rnorm_new
        it += 1
        trace.append({"iter": it, "residual": rnorm, "damping": lam})

    r_star, kt12 = resfun.unpack(z)
    return _assemble_solution(r_star, kt12, data, trace)


def _assemble_solution(r_star, kt12, data: AbstractData, trace) -> MatchingSolution:
    M = data.M
    D = horizon_factor(r_star, M)
    e2_rs = tilde_frame_derivative(2, r_star, "even", data, kt12)
    q = np.sqrt(1.0 + e2_rs**2 / D)
    f11, f22 = F11_F22(kt12, data)
    a112, a221 = Atilde_fields(kt12, data)
    phi = phi_from_K12(kt12, data.delta_K)
    return MatchingSolution(
        ScalarSlice(r_star, data.epsilon, "even"),
        ScalarSlice(kt12, data.epsilon, "odd"),
        f11,
        f22,
        a112,
        a221,
        q,
        phi,
        e2_rs,
        trace,
    )


def K11_init_on_sigma(matching: MatchingSolution, data: AbstractData) -> ScalarSlice:
    """K11 on the matched surface from the rotated data."""
    M = data.M
    r_star = matching.r_star.values
    D = horizon_factor(r_star, M)
    k11 = matching.q * matching.Ktilde11 + matching.e2tilde_rstar * matching.Atilde_112 / np.sqrt(D)
    return ScalarSlice(k11, data.epsilon, "even")


def a_init_on_sigma(matching: MatchingSolution, data: AbstractData):
    """Rotated-frame coordinate coefficients (a_t1, a_t2, a_theta1, a_theta2) on the surface."""
    x = matching.Ktilde12.values / data.delta_K
    c, s = cos_sin_phi(x)
    sq_tt = np.sqrt(data.gbold_tt.values)
    sq_th = np.sqrt(data.gbold_thetatheta.values)
    a_t1 = c * sq_tt
    a_t2 = -s * sq_tt
    a_th1 = s * sq_th
    a_th2 = c * sq_th
    return a_t1, a_t2, a_th1, a_th2


# ---------------------------------------------------------------------------
# constraint diagnostics
# ---------------------------------------------------------------------------


def constraint_residual(data: AbstractData) -> dict:
    """Discrete Hamiltonian and momentum constraint residuals of the data.

    The phi-circle is a warped product, so R(g3) = R(h2) - 2(Lap_h gamma +
    |grad gamma|^2_h); the log sin(theta) part of gamma is differentiated
    analytically so the pole cancellation is exact.
    """
    ang = data.ang
    L, dth = ang.period_L, ang.dtheta
    E = data.gbold_tt.values
    G = data.gbold_thetatheta.values
    gamma = data.gamma_init.values
    gamma_sm = gamma - np.log(np.sin(ang.theta2d))  # smooth even part
    K1, K2, K3 = data.Kbold_11.values, data.Kbold_22.values, data.Kbold_33.values

    sqEG = np.sqrt(E * G)
    # 2D scalar curvature of h = E dt^2 + G dtheta^2
    Rh = -(
        d_t(d_t(G, L) / sqEG, L) + d_theta(d_theta(E, "even", dth) / sqEG, "odd", dth)
    ) / sqEG
    # Laplacian and gradient of gamma; cot(theta) chain handled exactly
    cot = 1.0 / np.tan(ang.theta2d)
    dth_gamma = d_theta(gamma_sm, "even", dth) + cot
    dt_gamma = d_t(gamma_sm, L)
    lap = (
        d_t(sqEG / E * dt_gamma, L)
        + d_theta(sqEG / G * d_theta(gamma_sm, "even", dth), "odd", dth)
        + d_theta(sqEG / G, "even", dth) * cot
        - (sqEG / G) / np.sin(ang.theta2d) ** 2
    ) / sqEG
    grad2 = dt_gamma**2 / E + dth_gamma**2 / G
    R3 = Rh - 2.0 * (lap + grad2)

    trK = K1 + K2 + K3
    K_sq = K1**2 + K2**2 + K3**2
    ham = R3 - K_sq + trK**2

    # momentum components for diagonal data
    mom_t = (
        d_t(K1, L)
        - d_t(K2 + K3, L)
        + 0.5 * d_t(np.log(G), L) * (K1 - K2)
        + dt_gamma * (K1 - K3)
    )
    mom_th = (
        d_theta(K2, "even", dth)
        - d_theta(K1 + K3, "even", dth)
        + 0.5 * d_theta(np.log(E), "even", dth) * (K2 - K1)
        + dth_gamma * (K2 - K3)
    )

    scale = max(float(np.max(K_sq + trK**2)), 1e-300)
    report = {
        "hamiltonian_L2": slice_norm(ham, "L2_sin", ang),
        "hamiltonian_Linf": float(np.max(np.abs(ham))),
        "momentum_t_L2": slice_norm(mom_t, "L2_sin", ang),
        "momentum_theta_L2": slice_norm(mom_th, "L2_sin", ang),
        "curvature_scale": scale,
    }
    report["hamiltonian_relative"] = report["hamiltonian_Linf"] / scale
    report["momentum_relative"] = max(report["momentum_t_L2"], report["momentum_theta_L2"]) / (
        scale * data.epsilon
    )
    return report
