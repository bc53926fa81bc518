"""Acceptance suite: every criterion at its stated tolerance on the
reference desk grid 64(t) x 32(theta) x 400(r), eps = 0.25, M = 1,
r_min = 1e-4 eps.  One PASS/FAIL line is printed per criterion."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from axicollapse.background import SchwarzschildParams, horizon_factor, schw_connection, schw_kretschmann
from axicollapse.diagnostics import fit_loglog, frame_curvature, kretschmann, ricci_residual, run_diagnostics, weyl3_check
from axicollapse.frame import MetricHistory
from axicollapse.fuchsian import BranchSpec, FuchsianProblem, solve_backward_regular, solve_forward
from axicollapse.grids import AngularGrid, ScalarHistory, make_radial_grid, slice_norm
from axicollapse.initial_data import make_perturbed_data, solve_matching
from axicollapse.iteration import iterate_distance, picard_step, schwarzschild_state
from axicollapse.kasner import d1, d2, kasner_triple
from axicollapse.wave import march, surface_wave_data

M, EPS = 1.0, 0.25
R_MIN = 1e-4 * EPS


def _report(name: str, ok: bool, detail: str = ""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def reference():
    ang = AngularGrid(64, 32, 2 * np.pi)
    grid = make_radial_grid(EPS, R_MIN, 400).with_head(8)
    return SchwarzschildParams(M, EPS), grid, ang


@pytest.fixture(scope="module")
def base_run(reference):
    params, grid, ang = reference
    data = make_perturbed_data(params, ang, 0.0)
    base = schwarzschild_state(params, grid, ang, data)
    return base, picard_step(base, data), data


@pytest.fixture(scope="module")
def eta_run(reference):
    """Four iterations at eta = 1e-2 on the reference grid."""
    params, grid, ang = reference
    data = make_perturbed_data(params, ang, 1e-2)
    states = [schwarzschild_state(params, grid, ang, data)]
    for _ in range(4):
        states.append(picard_step(states[-1], data))
    return states, data


@pytest.fixture(scope="module")
def eta_diag(eta_run):
    states, _ = eta_run
    return run_diagnostics(states[-1])


# ---------------------------------------------------------------------------


def test_schwarzschild_fixed_point(base_run, reference):
    params, grid, ang = reference
    base, step, data = base_run
    K11e, K22e, _ = schw_connection(grid.nodes, M)
    inner = grid.nodes <= np.sqrt(EPS * R_MIN)  # inner half of the log grid
    rel11 = np.max((np.abs(step.conn.K11 - K11e[:, None, None]) / K11e[:, None, None])[inner])
    rel22 = np.max((np.abs(step.conn.K22 - K22e[:, None, None]) / np.abs(K22e[:, None, None]))[inner])
    rel12 = np.max(np.abs(step.conn.K12[inner])) * np.max(grid.nodes ** 1.5)
    aT1e = np.sqrt(horizon_factor(grid.nodes, M))[:, None, None]
    relA1 = np.max((np.abs(step.coeffs.a_T1 - aT1e) / aT1e)[inner])
    relA2 = np.max((np.abs(step.coeffs.a_Theta2 - grid.nodes[:, None, None]) / grid.nodes[:, None, None])[inner])
    relAo = max(np.max(np.abs(step.coeffs.a_T2[inner])), np.max(np.abs(step.coeffs.a_Theta1[inner])))
    ode_worst = max(rel11, rel22, rel12, relA1, relA2, relAo)

    # wave quantity: order-2-convergent gamma residual (vs the exact field)
    errs = []
    for n_r, f in ((200, 1), (400, 2)):
        g = make_radial_grid(EPS, R_MIN, n_r).with_head(4 * f)
        a = AngularGrid(16 * f, 8 * f, 2 * np.pi)
        d0 = make_perturbed_data(params, a, 0.0)
        b = schwarzschild_state(params, g, a, d0)
        geo = b.geometry()
        gamma0, v0 = surface_wave_data(d0, b.fol.r_star.values, b.matching.Ktilde12.values)
        u0 = gamma0 - np.log(EPS) - np.log(np.sin(a.theta2d))
        u0 = u0 + 0.05 * np.cos(2 * np.pi * a.t2d / a.period_L) * np.sin(a.theta2d) ** 2
        v_u0 = v0 + np.sqrt(horizon_factor(EPS, M)) / EPS
        st = march(geo, u0, v_u0, cfl=0.4 / f, energies=False)
        from axicollapse.grids import d_log_r

        rho3 = g.nodes[:, None, None]
        sD = np.sqrt(horizon_factor(rho3, M))
        v = st.e0_gamma
        e0v = -sD * d_log_r(v, g.dx) / rho3
        res = []
        for k in range(g.i_epsilon + 2, g.n_r - 2):
            c = geo.slice_cache(k)
            S0, coef = geo.march_source(c, st.u[k], st.v_u[k])
            full = e0v[k] + c.trK * v[k] - (c.ref_diag + S0 + coef * (e0v[k] - c.e0_v_ref))
            res.append(np.max(np.abs(full)) / np.max(np.abs(c.trK * v[k])))
        errs.append(np.max(res))
    order = np.log2(errs[0] / errs[1])
    ok = ode_worst <= 1e-6 and 1.5 <= order <= 3.0
    _report(
        "Schwarzschild fixed point",
        ok,
        f"ODE max rel {ode_worst:.2e} (tol 1e-6); wave residual order {order:.2f}",
    )


def test_kasner_algebra():
    a = np.linspace(0.8, 1.2, 10_000)
    r_sum = np.max(np.abs(d1(a) + d2(a) - (a - 1.5)))
    r_prod = np.max(np.abs(d1(a) * d2(a) - (a * a - 1.5 * a)))
    p = kasner_triple(a)
    r_p1 = np.max(np.abs(p[0] + p[1] + p[2] - 1.0))
    r_p2 = np.max(np.abs(p[0] ** 2 + p[1] ** 2 + p[2] ** 2 - 1.0))
    exact = abs(d1(1.0) - 0.5) < 1e-15 and abs(d2(1.0) + 1.0) < 1e-15
    ok = max(r_sum, r_prod, r_p1, r_p2) <= 1e-12 and exact
    _report(
        "Kasner algebra",
        ok,
        f"sweep residuals <= {max(r_sum, r_prod, r_p1, r_p2):.1e} (tol 1e-12); d1(1), d2(1) exact to 1e-15",
    )


def test_fuchsian_oracle():
    grid = make_radial_grid(EPS, R_MIN, 400)
    p = FuchsianProblem(
        lambda r: 3.0 / r, 3.0, lambda r: r**-2.0, grid, bound=1e-12, forcing_tail_power=-2.0
    )
    u_back = solve_backward_regular(p).values[:, 0, 0]
    back_rel = np.max(np.abs(u_back * 2.0 * grid.nodes - 1.0))

    u_fwd = solve_forward(p, 1.0).values[:, 0, 0]
    sol = solve_ivp(
        lambda r, y: -3.0 / r * y + r**-2.0,
        (grid.nodes[0], grid.nodes[-1]),
        [1.0],
        rtol=3e-14,
        atol=1e-30,
        dense_output=True,
        method="DOP853",
    )
    fwd_rel = np.max(np.abs(u_fwd - sol.sol(grid.nodes)[0]) / np.abs(sol.sol(grid.nodes)[0]))

    u_reg = solve_backward_regular(p).values
    from axicollapse.fuchsian import solve_backward

    u_free = solve_backward(p, BranchSpec("free", 1.0)).values
    superp = np.max(
        np.abs(u_free - (u_reg + grid.nodes[:, None, None] ** -3.0)) / grid.nodes[:, None, None] ** -3.0
    )
    ok = back_rel <= 1e-8 and fwd_rel <= 1e-6 and superp <= 1e-12
    _report(
        "Fuchsian oracle",
        ok,
        f"backward {back_rel:.1e} (1e-8); forward-vs-oracle {fwd_rel:.1e} (1e-6); superposition {superp:.1e} (1e-12)",
    )


def test_cmc_rate(eta_run, eta_diag):
    rep = eta_diag.cmc
    mean_ok = abs(rep["mean_at_rmin"] - rep["target_mean"]) / abs(rep["target_mean"]) <= 0.02
    ok = rep["decay_exponent"] >= 0.2 and mean_ok
    _report(
        "CMC rate",
        ok,
        f"decay exponent {rep['decay_exponent']:.2f} (>= 0.2); mean at r_min "
        f"{rep['mean_at_rmin']:.6f} vs {rep['target_mean']:.6f} (2%)",
    )


def test_avtd_dominance(eta_diag):
    ok = eta_diag.avtd_exponent >= 0.4
    _report("AVTD dominance", ok, f"spatial/kinetic decay exponent {eta_diag.avtd_exponent:.2f} (>= 0.4)")


def test_exponent_consistency(eta_diag):
    mism = eta_diag.exponents["max_mismatch"]
    ok = mism <= 0.05
    _report("Exponent consistency", ok, f"max pointwise slope mismatch {mism:.2e} (<= 5%)")


def test_curvature_blowup(base_run, eta_diag, reference):
    params, grid, ang = reference
    base, _, _ = base_run
    k_half = int(np.argmin(np.abs(grid.nodes - EPS / 2)))
    nodes, K = kretschmann(base.metric, grid, ang, base.chart, nodes=[k_half])
    fd_rel = np.max(np.abs(K[0] - schw_kretschmann(grid.nodes[k_half], M))) / schw_kretschmann(
        grid.nodes[k_half], M
    )
    slope_ok = abs(eta_diag.kretschmann_slope + 6.0) <= 0.1
    frame_ok = abs(eta_diag.frame_R0101_slope + 3.0) <= 0.05
    ok = fd_rel <= 1e-4 and slope_ok and frame_ok
    _report(
        "Curvature blow-up",
        ok,
        f"FD Kretschmann at eps/2 rel {fd_rel:.1e} (1e-4); K slope {eta_diag.kretschmann_slope:.3f} "
        f"(-6 +/- 0.1); |R0101| slope {eta_diag.frame_R0101_slope:.3f} (-3 +/- 0.05)",
    )


def test_matching_solve(reference, eta_run):
    params, grid, ang = reference
    # eta = 0 with the exact background histories: no spurious drift
    data0 = make_perturbed_data(params, ang, 0.0)
    K11e, K22e, _ = schw_connection(grid.nodes, M)
    shape = (grid.n_r, ang.n_t, ang.n_theta)
    k22h = ScalarHistory(np.broadcast_to(K22e[:, None, None], shape).copy(), grid.nodes, "even")
    k12h = ScalarHistory(np.zeros(shape), grid.nodes, "odd")
    sol0 = solve_matching(k22h, k12h, data0)
    drift_r = np.max(np.abs(sol0.r_star.values - EPS))
    drift_k = np.max(np.abs(sol0.Ktilde12.values))

    # eta = 1e-2: convergence in <= 20 iterations at residual 1e-10 < 1e-8,
    # pole condition enforced by parity ghosts (d_theta r_* = 0 exactly
    # in the even class); halving eta halves the solution norms
    states, data = eta_run
    tr = states[1].matching.newton_trace
    iters_ok = len(tr) - 1 <= 20 and tr[-1]["residual"] <= 1e-8

    base = schwarzschild_state(params, grid, ang, data)
    norms = {}
    for eta in (1e-2, 5e-3):
        d_eta = make_perturbed_data(params, ang, eta)
        b = schwarzschild_state(params, grid, ang, d_eta)
        s1 = picard_step(b, d_eta, surface_relax=1.0)
        norms[eta] = (
            slice_norm(s1.matching.r_star.values - EPS, "L2_sin", ang),
            slice_norm(s1.matching.Ktilde12.values, "L2_sin", ang),
        )
    ratios = [norms[1e-2][i] / norms[5e-3][i] for i in (0, 1)]
    linear_ok = all(abs(r - 2.0) <= 0.2 for r in ratios)
    ok = drift_r <= 1e-10 and drift_k <= 1e-10 and iters_ok and linear_ok
    _report(
        "Matching solve",
        ok,
        f"eta=0 drift ({drift_r:.1e}, {drift_k:.1e}) (1e-10); iters {len(tr) - 1} <= 20, "
        f"residual {tr[-1]['residual']:.1e}; halving ratios {ratios[0]:.2f}, {ratios[1]:.2f}",
    )


def test_picard_contraction(eta_run):
    states, _ = eta_run
    D = []
    for m in range(1, len(states)):
        Dg, Dk = iterate_distance(states[m], states[m - 1])
        D.append(max(Dg, Dk))
    r32 = D[2] / D[1]
    r43 = D[3] / D[2]
    ok = r32 < 1.0 and r43 < 1.0
    _report(
        "Picard contraction",
        ok,
        f"D(3)/D(2) = {r32:.3f}, D(4)/D(3) = {r43:.3f} (both < 1)",
    )


def _manufactured_residual_error(f: int):
    """Residual-operator error on closed-form fields at resolution factor f.

    On the exact background the continuum residual of (u, v_u) fields is
    hand-computable; the discrete evaluation must converge to it at the
    order of the angular stencils.
    """
    params = SchwarzschildParams(M, EPS)
    ang = AngularGrid(16 * f, 12 * f, 2 * np.pi)
    grid = make_radial_grid(EPS, EPS * 1e-3, 150 * f).with_head(4)
    data = make_perturbed_data(params, ang, 0.0)
    base = schwarzschild_state(params, grid, ang, data)
    geo = base.geometry()
    from axicollapse.grids import d_log_r

    rho3 = grid.nodes[:, None, None]
    x3 = np.log(rho3)
    t2, th2 = ang.t2d[None], ang.theta2d[None]
    L = ang.period_L
    A, B = 0.05, 0.4
    Yu = np.sin(th2) ** 2 * np.cos(th2) * np.cos(2 * np.pi * t2 / L)
    Yv = np.sin(th2) ** 2 * np.sin(2 * np.pi * t2 / L)
    qu = np.cos(x3)
    pv = np.sin(0.5 * x3)
    u = A * qu * Yu
    v_u = B * pv * Yv

    D = horizon_factor(rho3, M)
    sD = np.sqrt(D)
    v_ref = -sD / rho3
    v = v_ref + v_u
    from axicollapse.background import schw_trK

    trK = schw_trK(rho3, M)
    # exact pieces: e0 = -sD d/drho = -(sD/rho) d/dx
    e0_vu_exact = -(sD / rho3) * B * 0.5 * np.cos(0.5 * x3) * Yv
    dsD_drho = -M / (rho3**2 * sD)
    e0_v_ref_exact = sD * (dsD_drho / rho3 - sD / rho3**2)
    # S(gamma) on the background frame: D^{-1} dtt + rho^{-2} (dthth + cot dth)
    cot = 1.0 / np.tan(th2)
    gamma = u + np.log(rho3) + np.log(np.sin(th2))
    dth_Yu = (2 * np.sin(th2) * np.cos(th2) ** 2 - np.sin(th2) ** 3) * np.cos(2 * np.pi * t2 / L)
    ddth_Yu = (
        2 * np.cos(th2) ** 3
        - 4 * np.sin(th2) ** 2 * np.cos(th2)
        - 3 * np.sin(th2) ** 2 * np.cos(th2)
    ) * np.cos(2 * np.pi * t2 / L)
    dtt_u = -((2 * np.pi / L) ** 2) * A * qu * Yu
    S_exact = (
        dtt_u / D
        + (A * qu * ddth_Yu - 1.0 / np.sin(th2) ** 2) / rho3**2
        + cot * (A * qu * dth_Yu + cot) / rho3**2
    )
    res_exact = (e0_v_ref_exact + e0_vu_exact) + trK * v - S_exact

    # discrete evaluation with the production operators
    e0v_fd = -sD * d_log_r(v_ref + v_u, grid.dx) / rho3
    errs = []
    for k in range(grid.i_epsilon + 2, grid.n_r - 2, max(1, grid.n_r // 40)):
        c = geo.slice_cache(k)
        S0, coef = geo.march_source(c, u[k], v_u[k])
        res_disc = e0v_fd[k] + c.trK * v_u[k] + c.trK * c.v_ref - (c.ref_diag + S0)
        scale = np.max(np.abs(res_exact[k])) + 1e-30
        errs.append(np.max(np.abs(res_disc - res_exact[k])) / scale)
    return float(np.max(errs))


def test_residual_quality(eta_run, eta_diag, reference):
    params, grid, ang = reference
    states, data = eta_run
    res = eta_diag.residuals
    n = grid.n_r
    mid = slice(n // 3, 2 * n // 3)
    worst_mid = max(
        np.max(res["riccati_11_rel"][mid]),
        np.max(res["riccati_22_rel"][mid]),
        np.max(res["riccati_12_rel"][mid]),
        np.max(res["wave_rel"][mid]),
    )
    sn = res["scalar_nodes"]
    mid_mask = (sn > n // 3) & (sn < 2 * n // 3)
    worst_mid = max(worst_mid, np.max(res["scalar_Rh_rel"][mid_mask]))

    # order-2 reduction of the residual operator under grid doubling,
    # demonstrated on manufactured closed-form fields where discretization
    # is not masked by the iteration defect (see decisions ledger)
    e1 = _manufactured_residual_error(1)
    e2 = _manufactured_residual_error(2)
    order = np.log2(e1 / e2)

    # dimension-identity residual on arbitrary smooth 3-metrics: pure
    # discretization, dropping under refinement
    ids = []
    for f in (1, 2):
        a = AngularGrid(12 * f, 10 * f, 2 * np.pi)
        g = make_radial_grid(1.0, 0.05, 120 * f)
        rho = g.nodes[:, None, None]
        t2, th2 = a.t2d[None], a.theta2d[None]
        be = 0.3 * np.sin(2 * np.pi * t2 / a.period_L) * np.cos(th2) * np.cos(np.log(rho))
        bo = 0.2 * np.cos(2 * np.pi * t2 / a.period_L) * np.sin(th2) * np.sin(2 * np.log(rho))
        met = MetricHistory(
            g, 1.5 + be, rho**2 * (1 + 0.3 * be), 0.2 * rho * bo, 0.1 * be, 0.15 * bo,
            -(1 + 0.2 * be), rho**2 * np.sin(th2) ** 2 * np.ones_like(be),
        )
        ids.append(np.max(weyl3_check(met, g, a, None)["identity_rel"]))
    weyl_ok = ids[0] < 0.025 and ids[1] < ids[0] / 4.0

    ok = worst_mid <= 0.05 and 1.7 <= order <= 4.5 and weyl_ok
    _report(
        "Residual quality",
        ok,
        f"mid-radius residual {worst_mid:.2e} (<= 0.05); operator doubling order {order:.2f}; "
        f"identity residual {ids[0]:.1e} -> {ids[1]:.1e}",
    )
