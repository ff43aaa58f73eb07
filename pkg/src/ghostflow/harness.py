"""Epsilon sweeps, convergence-rate fits and report emission.

A sweep solves the leading-order tier once (it does not depend on epsilon),
then for every epsilon runs the nonlinear remainder chain, assembles the
expansion and -- in ``"newton"`` mode -- solves the full system directly,
starting from the expansion.  The four deviation norms

    ||u/eps - u1||_H2,  ||rho - rho0||_H2,  ||theta - theta0||_H3,  ||grad P||_H1

are measured on the Newton solution when it is available (an independent
check) and on the assembled expansion otherwise; each row records its source.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import GhostflowError
from .full_ns import FullState, assemble_expansion, residual_full, solve_full_newton
from .grid_core import Grid, ScalarField, VectorField, WallData, grad, sobolev_norm
from .limiting_system import Params, solve_limiting
from .remainder_system import solve_remainder_nonlinear

SCHEMA_VERSION = 1
CSV_COLUMNS = ("epsilon", "u_dev_H2", "rho_dev_H2", "theta_dev_H3", "gradP_H1",
               "rem_rho_H2", "rem_u_K", "rem_theta_H3", "newton_iters", "status")
DEVIATIONS = ("u_dev_H2", "rho_dev_H2", "theta_dev_H3", "gradP_H1", "theta_dev_Linf")
MODES = ("expansion", "newton")
MIN_FIT_POINTS = 3


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a sweep.

    ``perturbation`` (default 0) adds ``perturbation`` times a seeded random
    wall-vanishing field to the Newton initial guess; ``seed`` fixes it.
    """

    nx: int = 64
    ny: int = 64
    delta: float = 0.05
    wall_profile: str = "cosine"
    h_tag: str = "constant"
    h_params: tuple = (1.0,)
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    mu: float = 1.0
    lam: float = 0.0
    kappa: float = 1.0
    M: float = 1.0
    fp_tol: float = 1e-9
    newton_tol: float = 1e-9
    mode: str = "newton"
    out_dir: str = "ghostflow_out"
    seed: int = 0
    perturbation: float = 0.0

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        object.__setattr__(self, "h_params", tuple(float(p) for p in self.h_params))
        if any(not 0.0 < e < 1.0 for e in eps):
            raise ValueError(f"every epsilon must lie in (0, 1): {eps}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError(f"epsilon list must be strictly decreasing: {eps}")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        if self.wall_profile != "cosine":
            raise ValueError(f"unknown wall profile {self.wall_profile!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        Grid(self.nx, self.ny)  # validates the sizes

    def params(self, epsilon: float = 0.1) -> Params:
        """Physical parameters at ``epsilon`` (the leading-order tier ignores it)."""
        return Params(epsilon=epsilon, mu=self.mu, lam=self.lam, kappa=self.kappa, M=self.M, fp_tol=self.fp_tol)

    def grid(self) -> Grid:
        return Grid(self.nx, self.ny)

    def walls(self) -> WallData:
        return WallData.cosine(self.grid(), self.delta, self.h_tag, self.h_params)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eps_list"] = list(self.eps_list)
        out["h_params"] = list(self.h_params)
        return out


@dataclass
class SweepRow:
    epsilon: float
    deviations: dict = field(default_factory=dict)
    remainder: tuple = (math.nan, math.nan, math.nan)
    newton_iters: int = -1
    status: str = "ok"
    source: str = "expansion"
    residuals: dict = field(default_factory=dict)
    remainder_iterations: int = 0

    def csv_values(self) -> list:
        dev = [self.deviations.get(k, math.nan) for k in DEVIATIONS[:4]]
        return [self.epsilon, *dev, *self.remainder, self.newton_iters, self.status]


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    points: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceReport:
    config: RunConfig
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    slope_notes: dict = field(default_factory=dict)
    limiting_solves: int = 0
    limiting_iterations: int = 0
    timings: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return bool(self.rows) and all(r.status == "ok" for r in self.rows)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def fit_slope(eps: list[float], values: list[float]) -> SlopeFit:
    """Ordinary least squares on ``(log eps, log value)`` with the coefficient of determination."""
    x, y = np.log(np.asarray(eps, dtype=float)), np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    total = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - float(((y - fitted) ** 2).sum()) / total if total > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r_squared, len(x))


def deviation_norms(state: FullState, lim) -> dict:
    e = state.epsilon
    return {
        "u_dev_H2": sobolev_norm(state.u / e - lim.u1, 2),
        "rho_dev_H2": sobolev_norm(state.rho - lim.rho0, 2),
        "theta_dev_H3": sobolev_norm(state.theta - lim.theta0, 3),
        "gradP_H1": sobolev_norm(grad(state.P), 1),
        "theta_dev_Linf": (state.theta - lim.theta0).max_abs(),
    }


def _perturbation(grid: Grid, amplitude: float, seed: int) -> tuple[ScalarField, VectorField, ScalarField]:
    """Seeded smooth random fields vanishing on the walls."""
    rng = np.random.default_rng(seed)
    X, Y = grid.mesh()
    bump = np.sin(np.pi * Y / grid.ly)

    def field_():
        a, b, phase = rng.standard_normal(3)
        return amplitude * bump * (a * np.cos(2 * np.pi * X / grid.lx + phase) + b * np.sin(np.pi * Y / grid.ly))

    return ScalarField(grid, field_()), VectorField(grid, field_(), field_()), ScalarField(grid, field_())


def _fit_all(report: ConvergenceReport) -> None:
    ok = [r for r in report.rows if r.status == "ok"]
    for key in DEVIATIONS:
        values = [r.deviations[key] for r in ok]
        if len(ok) < MIN_FIT_POINTS:
            report.slope_notes[key] = f"undefined: {len(ok)} successful points (need {MIN_FIT_POINTS})"
        elif min(values) <= 0 or not all(np.isfinite(values)) or max(values) < 1e-10:
            report.slope_notes[key] = "undefined: deviation vanishes (rest state)"
        else:
            report.slopes[key] = fit_slope([r.epsilon for r in ok], values)


def run_epsilon_sweep(config: RunConfig) -> ConvergenceReport:
    """Run the sweep described by ``config``; per-epsilon failures are recorded, not raised."""
    report = ConvergenceReport(config)
    walls = config.walls()
    start = time.perf_counter()
    lim = solve_limiting(walls, config.params())
    report.limiting_solves += 1
    report.limiting_iterations = lim.iterations
    report.timings["limiting"] = time.perf_counter() - start
    for eps in config.eps_list:
        params = config.params(eps)
        row = SweepRow(eps)
        t0 = time.perf_counter()
        try:
            fo, rem = solve_remainder_nonlinear(lim, params)
            row.remainder = tuple(float(v) for v in rem.norms)
            row.remainder_iterations = rem.iterations
            state = assemble_expansion(lim, fo, rem, params)
            if config.mode == "newton":
                initial = state
                if config.perturbation > 0:
                    d_rho, d_u, d_theta = _perturbation(walls.grid, config.perturbation, config.seed)
                    initial = FullState.from_fields(state.rho + d_rho, state.u + d_u, state.theta + d_theta, eps)
                state = solve_full_newton(walls, params, initial, newton_tol=config.newton_tol)
                row.newton_iters = state.iterations
                row.source = "newton"
            row.deviations = deviation_norms(state, lim)
            row.residuals = residual_full(state, walls, params)
        except GhostflowError as exc:
            row.status = f"failed:{type(exc).__name__}"
        report.rows.append(row)
        report.timings[f"eps={eps!r}"] = time.perf_counter() - t0
    report.timings["total"] = time.perf_counter() - start
    _fit_all(report)
    return report


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def version_string() -> str:
    """Package version, suffixed with the short git revision when available."""
    from importlib.metadata import PackageNotFoundError, version

    try:
        base = version("artifact")
    except PackageNotFoundError:
        base = "0.0.0"
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{base}+g{rev}" if rev else base


def _csv_text(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row.csv_values()])
    return buf.getvalue()


def _json_payload(report: ConvergenceReport) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "version": version_string(),
        "config": report.config.to_dict(),
        "columns": list(CSV_COLUMNS),
        "rows": [
            {
                "epsilon": r.epsilon, "deviations": r.deviations, "remainder": list(r.remainder),
                "newton_iters": r.newton_iters, "status": r.status, "source": r.source,
                "residuals": r.residuals, "remainder_iterations": r.remainder_iterations,
            }
            for r in report.rows
        ],
        "slopes": {k: v.to_dict() for k, v in report.slopes.items()},
        "slope_notes": report.slope_notes,
        "limiting_solves": report.limiting_solves,
        "limiting_iterations": report.limiting_iterations,
        "complete": report.complete,
        "timings": report.timings,
    }


def report_from_json(payload: dict) -> ConvergenceReport:
    """Rebuild a report from the JSON emitted by :func:`emit_report`."""
    if payload.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {payload.get('schema')!r}")
    names = {f.name for f in fields(RunConfig)}
    config = RunConfig(**{k: v for k, v in payload["config"].items() if k in names})
    rows = [SweepRow(r["epsilon"], r["deviations"], tuple(r["remainder"]), r["newton_iters"], r["status"],
                     r["source"], r["residuals"], r["remainder_iterations"]) for r in payload["rows"]]
    slopes = {k: SlopeFit(**v) for k, v in payload["slopes"].items()}
    return ConvergenceReport(config, rows, slopes, dict(payload["slope_notes"]), payload["limiting_solves"],
                             payload["limiting_iterations"], dict(payload["timings"]))


def _plot(report: ConvergenceReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in report.rows if r.status == "ok"]
    fig, ax = plt.subplots(figsize=(5, 4))
    eps = [r.epsilon for r in ok]
    for key in DEVIATIONS[:4]:
        label = key if key not in report.slopes else f"{key} (slope {report.slopes[key].slope:.2f})"
        ax.loglog(eps, [r.deviations[key] for r in ok], "o-", label=label)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("deviation norm")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def emit_report(report: ConvergenceReport, out_dir: str | Path | None = None,
                formats: tuple = ("csv", "json")) -> dict:
    """Write the report as ``sweep.csv`` / ``sweep.json`` / ``sweep.png``; returns the written paths."""
    out = Path(out_dir if out_dir is not None else report.config.out_dir)
    unknown = set(formats) - {"csv", "json", "png"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = {}
        if "csv" in formats:
            written["csv"] = out / "sweep.csv"
            written["csv"].write_text(_csv_text(report))
        if "json" in formats:
            written["json"] = out / "sweep.json"
            written["json"].write_text(json.dumps(_json_payload(report), indent=2, sort_keys=True) + "\n")
        if "png" in formats:
            written["png"] = out / "sweep.png"
            _plot(report, written["png"])
    except OSError as exc:
        raise OSError(f"could not write report to {out}: {exc}") from exc
    return written


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_LIST_KEYS = {"eps_list", "h_params"}


def _coerce(key: str, raw: str):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    if key not in kinds:
        raise ValueError(f"unknown config key {key!r}")
    if key in _LIST_KEYS:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    default = getattr(RunConfig, key)
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines (``#`` comments); lists are comma or space separated."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[run]\n" + text)
    return {key: _coerce(key, value) for key, value in parser["run"].items()}


def load_config(path: str | Path, **overrides) -> RunConfig:
    values = parse_config_text(Path(path).read_text())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
