"""Configuration, run orchestration, serialization, and the CLI surface.

Runs write plain CSV (RFC-4180 style, '.' decimal, 17 significant digits)
plus one JSON manifest indexing every emitted file.  Outputs are pure
functions of the config and seed, independent of the worker count.
Exit codes: 0 success, 2 config error, 3 numerical stage failure,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .background import (
    SchwarzschildParams,
    schw_connection,
    schw_curvature,
    schw_frame_coeffs,
    schw_gamma,
    schw_kretschmann,
    schw_trK,
    schw_trK_leading,
)
from .diagnostics import run_diagnostics
from .grids import AngularGrid, Foliation, RadialGrid, make_radial_grid
from .initial_data import AbstractData, ModeSpec, constraint_residual, default_modes, make_perturbed_data
from .iteration import IterateState, picard_step, run_iteration, schwarzschild_state
from .kasner import d1, d2, kasner_triple

__all__ = ["RunConfig", "ConfigError", "parse_config", "serialize_config", "run", "main"]


class ConfigError(ValueError):
    pass


FMT = "%.17g"


@dataclass
class RunConfig:
    M: float = 1.0
    epsilon: float = 0.25
    eta: float = 0.0
    r_min: float = 0.25e-4
    n_r: int = 400
    n_t: int = 64
    n_theta: int = 32
    period_L: float = 2.0 * np.pi
    cfl: float = 0.4
    picard_max_m: int = 4
    picard_tol: float = 1e-3
    newton_max_iter: int = 20
    newton_tol: float = 1e-10
    modes: str = ""  # "target:k_t:p_theta:amp:phase;..." (empty = defaults)
    output_dir: str = "runs/out"
    seed: int = -1  # >= 0 randomizes default mode phases
    n_head: int = 8
    k11_substeps: int = 64
    surface_relax: float = 0.5
    k22_iters: int = 8
    k22_tol: float = 1e-10
    blowup_ceiling: float = 1e12
    workers: int = 1
    save_fields: str = "summary"  # summary | full
    snapshot_radii: int = 16

    def validate(self) -> "RunConfig":
        if self.M <= 0 or self.epsilon <= 0 or self.r_min <= 0:
            raise ConfigError("M, epsilon, r_min must be positive")
        if self.epsilon >= 2.0 * self.M:
            raise ConfigError("epsilon must satisfy epsilon < 2M (inside the horizon)")
        if not self.r_min < self.epsilon / 4.0:
            raise ConfigError("need r_min < epsilon / 4")
        if self.eta < 0:
            raise ConfigError("eta must be nonnegative")
        for name in ("n_r", "n_t", "n_theta", "picard_max_m", "newton_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.period_L <= 0 or self.cfl <= 0:
            raise ConfigError("period_L and cfl must be positive")
        if self.save_fields not in ("summary", "full"):
            raise ConfigError("save_fields must be 'summary' or 'full'")
        return self

    # -- derived builders ----------------------------------------------------

    def params(self) -> SchwarzschildParams:
        return SchwarzschildParams(self.M, self.epsilon)

    def grid(self) -> RadialGrid:
        return make_radial_grid(self.epsilon, self.r_min, self.n_r).with_head(self.n_head)

    def angular(self) -> AngularGrid:
        return AngularGrid(self.n_t, self.n_theta, self.period_L)

    def mode_list(self) -> list[ModeSpec]:
        if not self.modes.strip():
            return default_modes(self.seed if self.seed >= 0 else None)
        out = []
        for chunk in self.modes.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(":")
            if len(parts) not in (4, 5):
                raise ConfigError(f"bad mode entry {chunk!r}: want target:k_t:p_theta:amp[:phase]")
            phase = float(parts[4]) if len(parts) == 5 else 0.0
            out.append(ModeSpec(parts[0], int(parts[1]), int(parts[2]), float(parts[3]), phase))
        return out

    def data(self) -> AbstractData:
        return make_perturbed_data(self.params(), self.angular(), self.eta, self.mode_list())

    def step_kwargs(self) -> dict:
        return {
            "cfl": self.cfl,
            "newton_max_iter": self.newton_max_iter,
            "newton_tol": self.newton_tol,
            "k11_substeps": self.k11_substeps,
            "picard_k22_iters": self.k22_iters,
            "picard_k22_tol": self.k22_tol,
            "surface_relax": self.surface_relax,
        }


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config(path: str | Path) -> RunConfig:
    """key=value structured text -> validated config with defaults filled."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        typ = _FIELD_TYPES[key]
        try:
            if typ in ("int", int):
                values[key] = int(val)
            elif typ in ("float", float):
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: cannot parse {key}={val!r}") from exc
    return RunConfig(**values).validate()


def serialize_config(cfg: RunConfig) -> str:
    """Normalized key=value text (round-trips through parse_config)."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, float):
            lines.append(f"{f.name} = {FMT % v}")
        else:
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------


class RunWriter:
    """Collects CSV outputs and the manifest for one run directory."""

    def __init__(self, out_dir: str | Path, cfg: RunConfig):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.manifest = {
            "version": __version__,
            "config": dataclasses.asdict(cfg),
            "stage_timings": {},
            "warnings": [],
            "files": {},
            "checksums": {},
        }

    def add_warning(self, msg: str):
        self.manifest["warnings"].append(msg)

    def timing(self, stage: str, seconds: float):
        self.manifest["stage_timings"][stage] = round(seconds, 3)

    def write_csv(self, name: str, header: list[str], columns: list[np.ndarray], meta=None):
        path = self.dir / name
        cols = [np.asarray(c).ravel() for c in columns]
        n = cols[0].size
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\r\n")
            for i in range(n):
                fh.write(",".join(FMT % c[i] for c in cols) + "\r\n")
        entry = {"rows": n, "columns": header}
        if meta:
            entry.update(meta)
        self.manifest["files"][name] = entry
        self.manifest["checksums"][name] = f"{zlib.crc32(path.read_bytes()):08x}"

    def write_history(self, name: str, values: np.ndarray, radii: np.ndarray, ang: AngularGrid, parity: str):
        """Field contract: columns r,t,theta,value; r outer, t middle, theta inner."""
        n_r = radii.size
        r_col = np.repeat(radii, ang.n_t * ang.n_theta)
        t_col = np.tile(np.repeat(ang.t_nodes, ang.n_theta), n_r)
        th_col = np.tile(ang.theta_nodes, n_r * ang.n_t)
        self.write_csv(
            name,
            ["r", "t", "theta", "value"],
            [r_col, t_col, th_col, values.ravel()],
            meta={"field": name.removesuffix(".csv"), "parity": parity},
        )

    def write_slice(self, name: str, values: np.ndarray, ang: AngularGrid, extra: dict | None = None):
        t_col = np.repeat(ang.t_nodes, ang.n_theta)
        th_col = np.tile(ang.theta_nodes, ang.n_t)
        cols = [t_col, th_col, values.ravel()]
        header = ["t", "theta", "value"]
        if extra:
            for k, v in extra.items():
                header.append(k)
                cols.append(np.asarray(v).ravel())
        self.write_csv(name, header, cols)

    def finish(self):
        """Atomic manifest write: every emitted file is already indexed."""
        tmp = self.dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(self.manifest, indent=2, default=str))
        os.replace(tmp, self.dir / "manifest.json")


def _load_csv_column(path: Path, col: int, skip_header: bool = True) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1 if skip_header else 0, usecols=col)


def load_history_csv(path: Path, n_r: int, n_t: int, n_theta: int) -> np.ndarray:
    vals = _load_csv_column(path, 3)
    return vals.reshape(n_r, n_t, n_theta)


# ---------------------------------------------------------------------------
# state serialization (what `diagnose` needs to rebuild an iterate)
# ---------------------------------------------------------------------------

_STATE_FIELDS = [
    ("gamma_u", "even"),
    ("v_u", "even"),
    ("K11", "even"),
    ("K22", "even"),
    ("K12", "odd"),
    ("a_T1", "even"),
    ("a_T2", "odd"),
    ("a_Theta2", "even"),
    ("e1_rho", "even"),
    ("e2_rho", "odd"),
]


def save_state(writer: RunWriter, state: IterateState):
    grid, ang = state.grid, state.ang
    arrays = {
        "gamma_u": state.wave.u,
        "v_u": state.wave.v_u,
        "K11": state.conn.K11,
        "K22": state.conn.K22,
        "K12": state.conn.K12,
        "a_T1": state.coeffs.a_T1,
        "a_T2": state.coeffs.a_T2,
        "a_Theta2": state.coeffs.a_Theta2,
        "e1_rho": state.coeffs.e1_rho,
        "e2_rho": state.coeffs.e2_rho,
    }
    for name, parity in _STATE_FIELDS:
        writer.write_history(f"field_{name}.csv", arrays[name], grid.nodes, ang, parity)
    writer.write_slice("chart_tau.csv", state.chart.tau, ang)
    writer.write_slice(
        "matching.csv",
        state.matching.r_star.values,
        ang,
        extra={
            "Ktilde12": state.matching.Ktilde12.values,
            "phi": state.matching.phi,
            "e2tilde_rstar": state.matching.e2tilde_rstar,
        },
    )
    # the matching CSV names its first value column r_star
    writer.manifest["files"]["matching.csv"]["columns"] = [
        "t", "theta", "r_star", "Ktilde12", "phi", "e2tilde_rstar"
    ]


def load_state(run_dir: str | Path) -> IterateState:
    """Rebuild an iterate from a run directory written with save_fields=full."""
    from .frame import ChartMap, FrameCoeffs, reconstruct_metric
    from .riccati import FrameConnection
    from .wave import WaveState
    from .background import horizon_factor

    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = RunConfig(**{k: v for k, v in manifest["config"].items()}).validate()
    grid, ang = cfg.grid(), cfg.angular()
    n = (grid.n_r, ang.n_t, ang.n_theta)
    fields = {
        name: load_history_csv(run_dir / f"field_{name}.csv", *n) for name, _ in _STATE_FIELDS
    }
    match_cols = np.loadtxt(run_dir / "matching.csv", delimiter=",", skiprows=1)
    r_star = match_cols[:, 2].reshape(ang.n_t, ang.n_theta)
    kt12 = match_cols[:, 3].reshape(ang.n_t, ang.n_theta)
    tau = _load_csv_column(run_dir / "chart_tau.csv", 2).reshape(ang.n_t, ang.n_theta)

    data = cfg.data()
    from .initial_data import _assemble_solution

    matching = _assemble_solution(r_star, kt12, data, [])
    fol = Foliation(matching.r_star, cfg.epsilon)
    chart = ChartMap(ang, tau)
    coeffs = FrameCoeffs(
        grid, ang, fields["a_T1"], fields["a_T2"], fields["a_Theta2"], fields["e1_rho"], fields["e2_rho"]
    )
    rho3 = grid.nodes[:, None, None]
    r = fol.r_of_rho(rho3)
    w = fol.w_of_r(r)
    v_ref = -np.sqrt(horizon_factor(r, cfg.M)) * w / rho3
    wave = WaveState(
        grid, ang, fields["gamma_u"], fields["v_u"], v_ref, np.log(rho3 / r), np.zeros((grid.n_r, 3))
    )
    from .wave import extract_alpha

    conn = FrameConnection(grid, fields["K11"], fields["K22"], fields["K12"], wave.e0_gamma.copy())
    metric = reconstruct_metric(coeffs, wave.gamma, fol, cfg.M)
    state = IterateState(-1, grid, ang, cfg.M, fol, chart, matching, wave, conn, coeffs, metric)
    geo = state.geometry()
    alpha, gamma1 = extract_alpha(wave, geo)
    wave.alpha = alpha
    wave.gamma1 = gamma1
    for k in range(grid.n_r):
        from .wave import energy

        kin, spa, tot = energy(wave, geo, k)
        wave.energies[k] = (kin, spa, tot)
    return state


# ---------------------------------------------------------------------------
# run outputs
# ---------------------------------------------------------------------------


def write_run_outputs(writer: RunWriter, state: IterateState, report=None, diag=None, data=None):
    grid, ang = state.grid, state.ang
    rho = grid.nodes
    writer.write_csv(
        "energy_trace.csv",
        ["rho", "kinetic", "spatial", "weighted_total"],
        [rho, state.wave.energies[:, 0], state.wave.energies[:, 1], state.wave.energies[:, 2]],
    )
    writer.write_slice("alpha.csv", state.wave.alpha.values, ang)
    if report is not None:
        rows = report.rows()
        writer.write_csv(
            "convergence.csv",
            ["m", "D_gamma", "D_K", "ratio"],
            [
                np.array([r["m"] for r in rows], dtype=float),
                np.array([r["D_gamma"] for r in rows]),
                np.array([r["D_K"] for r in rows]),
                np.array([r["ratio"] for r in rows]),
            ],
        )
    if diag is not None:
        cmc = diag.cmc
        kin, spa = state.wave.energies[:, 0], state.wave.energies[:, 1]
        avtd = spa / np.maximum(kin, 1e-300)
        writer.write_csv(
            "cmc_avtd.csv",
            ["rho", "cmc_deviation", "avtd_ratio"],
            [rho, cmc["deviation"], avtd],
        )
        exps = diag.exponents
        writer.write_slice(
            "exponent_fits.csv",
            state.wave.alpha.values,
            ang,
            extra={
                "slope_phiphi": exps["g_phiphi"]["slope"],
                "pred_phiphi": exps["g_phiphi"]["predicted"],
                "slope_thetatheta": exps["g_ThetaTheta"]["slope"],
                "pred_thetatheta": exps["g_ThetaTheta"]["predicted"],
                "slope_tt": exps["g_TT"]["slope"],
                "pred_tt": exps["g_TT"]["predicted"],
            },
        )
        writer.manifest["files"]["exponent_fits.csv"]["columns"] = [
            "t", "theta", "alpha", "slope_phiphi", "pred_phiphi",
            "slope_thetatheta", "pred_thetatheta", "slope_tt", "pred_tt",
        ]
        kn = diag.kretschmann_nodes
        writer.write_csv(
            "kretschmann.csv",
            ["rho", "kmin", "kmean", "kmax"],
            [
                grid.nodes[kn],
                diag.kretschmann.min(axis=(1, 2)),
                diag.kretschmann.mean(axis=(1, 2)),
                diag.kretschmann.max(axis=(1, 2)),
            ],
        )
        res = diag.residuals
        writer.write_csv(
            "residuals.csv",
            ["rho", "riccati11", "riccati22", "riccati12", "wave"],
            [rho, res["riccati_11_rel"], res["riccati_22_rel"], res["riccati_12_rel"], res["wave_rel"]],
        )
        writer.manifest["diagnostics_summary"] = {
            "kretschmann_slope": diag.kretschmann_slope,
            "frame_R0101_slope": diag.frame_R0101_slope,
            "dual_route_rel": diag.dual_route_rel,
            "cmc_decay_exponent": cmc["decay_exponent"],
            "cmc_mean_at_rmin": cmc["mean_at_rmin"],
            "avtd_exponent": diag.avtd_exponent,
            "exponent_max_mismatch": exps["max_mismatch"],
            "weyl_identity_max": float(np.max(diag.weyl["identity_rel"])),
            "weyl_scalar_median": float(np.median(diag.weyl["scalar_rel"])),
        }
    if data is not None:
        writer.manifest["constraint_residual"] = constraint_residual(data)
    # metric snapshots at configurable radii
    cfg = writer.cfg
    picks = np.unique(
        np.linspace(0, grid.n_r - 1, max(2, cfg.snapshot_radii)).astype(int)
    )
    met = state.metric
    for comp in ("g_TT", "g_ThetaTheta", "g_TTheta", "g_rhoT", "g_rhoTheta", "g_phiphi"):
        vals = getattr(met, comp)[picks]
        writer.write_history(f"metric_{comp}.csv", vals, grid.nodes[picks], ang, "even")
    if cfg.save_fields == "full":
        save_state(writer, state)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_schwarzschild(args) -> int:
    M, r = args.M, args.r
    try:
        K11, K22, K33 = schw_connection(r, M)
        a_t1, a_th2, a_t2, a_th1 = schw_frame_coeffs(r, M)
        R0101, R0202, R0303 = schw_curvature(r, M)
        rows = {
            "gamma(r,pi/2)": schw_gamma(r, np.pi / 2),
            "K11": K11,
            "K22": K22,
            "K33": K33,
            "trK": schw_trK(r, M),
            "trK_leading": schw_trK_leading(r, M),
            "a_t1": a_t1,
            "a_theta2": a_th2,
            "a_t2": a_t2,
            "a_theta1": a_th1,
            "R0101": R0101,
            "R0202": R0202,
            "R0303": R0303,
            "kretschmann": schw_kretschmann(r, M),
        }
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for k, v in rows.items():
        print(f"{k}={FMT % v}")
    return 0


def _cmd_kasner(args) -> int:
    a = args.alpha
    try:
        v1, v2 = d1(a), d2(a)
        p = kasner_triple(a)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"d1={FMT % v1}")
    print(f"d2={FMT % v2}")
    print(f"p_t={FMT % p[0]}")
    print(f"p_theta={FMT % p[1]}")
    print(f"p_phi={FMT % p[2]}")
    print(f"sum_p_minus_1={FMT % (sum(p) - 1.0)}")
    print(f"sum_p2_minus_1={FMT % (sum(x * x for x in p) - 1.0)}")
    print(f"d_sum_residual={FMT % (v1 + v2 - (a - 1.5))}")
    print(f"d_prod_residual={FMT % (v1 * v2 - (a * a - 1.5 * a))}")
    return 0


def _run_evolution(cfg: RunConfig, full_loop: bool) -> int:
    try:
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    writer = RunWriter(cfg.output_dir, cfg)
    (writer.dir / "config.txt").write_text(serialize_config(cfg))
    t0 = time.time()
    try:
        data = cfg.data()
        grid, ang = cfg.grid(), cfg.angular()
        writer.timing("setup", time.time() - t0)
        t1 = time.time()
        if full_loop:
            state, report = run_iteration(
                data, grid, ang, max_m=cfg.picard_max_m, tol=cfg.picard_tol, **cfg.step_kwargs()
            )
            if report.stop_reason.startswith("error"):
                writer.add_warning(report.stop_reason)
                writer.finish()
                print(f"stage failure: {report.stop_reason}", file=sys.stderr)
                return 3
        else:
            base = schwarzschild_state(cfg.params(), grid, ang, data)
            state = picard_step(base, data, **cfg.step_kwargs())
            report = None
        writer.timing("evolution", time.time() - t1)
        t2 = time.time()
        diag = run_diagnostics(state, fast=True)
        writer.timing("diagnostics", time.time() - t2)
        if state.matching.newton_trace:
            writer.manifest["newton_trace"] = state.matching.newton_trace
        write_run_outputs(writer, state, report, diag, data)
        writer.add_warning(
            "regularized backward-integral tails active below r_min; induced error O(r_min^delta)"
        )
        writer.finish()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"numerical stage failure: {exc}", file=sys.stderr)
        return 3
    if full_loop and cfg.picard_tol > 0 and report is not None and report.stop_reason == "max_iter":
        print("non-convergence: picard tolerance not reached", file=sys.stderr)
        return 4
    print(f"run written to {writer.dir}")
    return 0


def _cmd_diagnose(args) -> int:
    try:
        state = load_state(args.run_dir)
        cfg = RunConfig(**json.loads((Path(args.run_dir) / "manifest.json").read_text())["config"])
        cfg.output_dir = str(args.out or args.run_dir)
        writer = RunWriter(cfg.output_dir, cfg)
        diag = run_diagnostics(state, fast=args.fast)
        write_run_outputs(writer, state, None, diag, None)
        writer.finish()
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"numerical stage failure: {exc}", file=sys.stderr)
        return 3
    print(f"diagnostics written to {writer.dir}")
    return 0


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    for name in ("eta", "out", "workers", "seed", "max_m"):
        val = getattr(args, name, None)
        if val is None:
            continue
        if name == "out":
            cfg.output_dir = val
        elif name == "max_m":
            cfg.picard_max_m = val
        else:
            setattr(cfg, name if name != "workers" else "workers", val)
    env_workers = os.environ.get("WORKERS")
    if env_workers and getattr(args, "workers", None) is None:
        cfg.workers = int(env_workers)
    # worker count is a thread hint only; outputs are worker-independent
    os.environ.setdefault("OMP_NUM_THREADS", str(max(1, cfg.workers)))
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="axicollapse",
        description="Desk-scale interior-collapse simulator: background tables, "
        "exponent maps, single sweeps, full iterations, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_s = sub.add_parser("schwarzschild", help="print background quantities as key=value")
    p_s.add_argument("--M", type=float, default=1.0)
    p_s.add_argument("--r", type=float, required=True)

    p_k = sub.add_parser("kasner", help="print exponent-map values and relation residuals")
    p_k.add_argument("--alpha", type=float, required=True)

    for name, help_txt in (
        ("evolve", "one forward-backward sweep off the background"),
        ("iterate", "full iteration loop"),
    ):
        p = sub.add_parser(name, help=help_txt)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--eta", type=float, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--max-m", dest="max_m", type=int, default=None)

    p_d = sub.add_parser("diagnose", help="recompute diagnostics from a completed run directory")
    p_d.add_argument("run_dir", type=str)
    p_d.add_argument("--out", type=str, default=None)
    p_d.add_argument("--fast", action="store_true")

    args = parser.parse_args(argv)
    if args.cmd == "schwarzschild":
        return _cmd_schwarzschild(args)
    if args.cmd == "kasner":
        return _cmd_kasner(args)
    if args.cmd == "diagnose":
        return _cmd_diagnose(args)
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args)
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return _run_evolution(cfg, full_loop=(args.cmd == "iterate"))


if __name__ == "__main__":
    sys.exit(main())
