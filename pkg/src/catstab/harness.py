"""Experiment runner: config parsing, the named experiments, persisted artifacts and plots.

Every run writes into one directory:

* ``config.json`` - the configuration as run, keys sorted
* one CSV per artifact (header row, CRLF line ends)
* one SVG per plot, rendered from the CSVs
* ``manifest.json`` - package versions, timings, summary numbers, artifact list
"""

from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import reduction
from .errors import CatstabError, ConfigError
from .fock import DEFAULT_STORAGE_DIM, DensityMatrix, cat_state, partial_trace
from .lindblad import PropagatorPlan, TimeSeries, evolve, steady_state, steady_state_residual
from .models import (
    EffectiveParams,
    ThreeModeParams,
    build_model,
    check_rate_hierarchy,
    effective_model,
    params_from_dict,
    params_to_dict,
)
from .observables import default_axis, fidelity, mean_parity, mean_photon, photon_pmf, wigner
from .svg import heatmap, line_plot

log = logging.getLogger(__name__)

EXPERIMENTS = ("evolve", "steady", "wigner", "sweep", "compare", "reduce")
MODELS = ("effective", "two_mode", "three_mode")
CONFIG_KEYS = ("experiment", "model", "params", "grid", "output", "seed", "target_alpha", "plan")
DEFAULT_SAMPLES = 201
PLATEAU_FRACTION = 0.1
PLATEAU_TOLERANCE = 1e-3
SWEEP_G_2PH = {"start": 50.0, "stop": 400.0, "step": 50.0}
SWEEP_G_PS = {"start": 100.0, "stop": 700.0, "step": 50.0}
SWEEP_EPS_RATIO = 4.0


# --- configuration -----------------------------------------------------------------

def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


@dataclass
class ExperimentConfig:
    experiment: str
    model: str = "effective"
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    output: str = "runs/out"
    seed: int = 0
    target_alpha: float | None = None
    plan: dict = field(default_factory=dict)
    source: str = ""  # raw JSON text, used to anchor error messages

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise self.error(f"unknown experiment {self.experiment!r}; expected one of {list(EXPERIMENTS)}",
                             "experiment")
        if self.model not in MODELS:
            raise self.error(f"unknown model {self.model!r}; expected one of {list(MODELS)}", "model")
        if not isinstance(self.seed, int):
            raise self.error("seed must be an integer", "seed")
        if self.target_alpha is not None and (
                isinstance(self.target_alpha, bool) or not isinstance(self.target_alpha, (int, float))
                or not math.isfinite(self.target_alpha) or self.target_alpha < 0):
            raise self.error("target_alpha must be a non-negative number", "target_alpha")
        if not isinstance(self.params, dict):
            raise self.error("params must be an object", "params")
        if not isinstance(self.grid, dict):
            raise self.error("grid must be an object", "grid")
        try:
            PropagatorPlan(**self.plan)
        except (TypeError, ValueError) as exc:
            raise self.error(f"invalid propagator plan: {exc}", "plan") from exc
        if self.experiment == "compare" and self.model != "three_mode":
            raise self.error("compare needs the three_mode model parameters", "model")
        # validate now so that no output is written for a bad config
        self.model_params()
        if self.experiment in ("evolve", "compare"):
            self.time_grid()

    def error(self, message: str, key: str | None = None) -> ConfigError:
        line = _line_of(self.source, key) if key and self.source else None
        return ConfigError(message, line)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", 1)
        for key in data:
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}", _line_of(text, key))
        if "experiment" not in data:
            raise ConfigError("missing required key 'experiment'", 1)
        return cls(**data, source=text)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_json(text)

    def to_dict(self) -> dict:
        out = {
            "experiment": self.experiment,
            "model": self.model,
            "params": self.params,
            "grid": self.grid,
            "output": self.output,
            "seed": self.seed,
        }
        if self.target_alpha is not None:
            out["target_alpha"] = self.target_alpha
        if self.plan:
            out["plan"] = self.plan
        return out

    def model_params(self):
        data = dict(self.params)
        if self.model == "effective" and self.target_alpha is not None and "eps_2ph" not in data:
            # drive that places the two-photon manifold at +/- target_alpha
            data["eps_2ph"] = float(data.get("kappa_2ph", EffectiveParams.kappa_2ph)) * self.target_alpha**2 / 2
        try:
            return params_from_dict(self.model, data)
        except ConfigError as exc:
            key = getattr(exc, "key", None)
            line = _line_of(self.source, key) if key else _line_of(self.source, "params")
            raise ConfigError(str(exc), line) from None

    def propagator_plan(self) -> PropagatorPlan:
        return PropagatorPlan(**self.plan)

    def time_grid(self, default_end: float | None = None) -> np.ndarray:
        g = self.grid
        if "times" in g:
            times = np.asarray(g["times"], dtype=float)
            if times.ndim != 1 or times.size == 0:
                raise self.error("time grid is empty", "times")
            if np.any(np.diff(times) <= 0) or times[0] < 0:
                raise self.error("times must be non-negative and strictly increasing", "times")
            return times
        if default_end is None:
            default_end = self._default_t_end()
        t_end = float(g.get("t_end", default_end))
        samples = g.get("samples", DEFAULT_SAMPLES)
        if not isinstance(samples, int) or samples < 2:
            raise self.error("time grid is empty: samples must be an integer >= 2", "samples")
        if not t_end > 0:
            raise self.error("time grid is empty: t_end must be positive", "t_end")
        return np.linspace(0.0, t_end, samples)

    def _default_t_end(self) -> float:
        if self.experiment == "compare":
            return 0.5
        k1 = float(self.params.get("kappa_1ph", 1.0))
        return 1.0 / k1 if k1 > 0 else 1.0


# --- helpers ------------------------------------------------------------------

def _target(config: ExperimentConfig, params, dim: int):
    sign = -1 if isinstance(params, EffectiveParams) and params.target_parity == "-" else +1
    if config.target_alpha is not None:
        alpha = config.target_alpha
    elif isinstance(params, EffectiveParams):
        alpha = params.alpha
    else:
        alpha = params.alpha()
    return cat_state(alpha, sign, dim)


def _storage(rho: DensityMatrix) -> DensityMatrix:
    return rho if rho.layout.n_modes == 1 else partial_trace(rho, [0])


def _vacuum(model) -> DensityMatrix:
    rho = np.zeros((model.dim, model.dim), dtype=complex)
    rho[0, 0] = 1.0
    return DensityMatrix(rho, model.layout)


def plateau(values, fraction: float = PLATEAU_FRACTION, tol: float = PLATEAU_TOLERANCE) -> bool:
    """True when the last ``fraction`` of the samples varies by less than ``tol``."""
    values = np.asarray(values, dtype=float)
    tail = values[-max(1, int(round(fraction * values.size))):]
    return bool(np.ptp(tail) < tol)


def timeseries_plot(series: TimeSeries, columns, title: str, ylabel: str = "fidelity",
                    xlabel: str = "t kappa_1ph") -> str:
    return line_plot(series.times, {c: series[c] for c in columns}, title=title, xlabel=xlabel,
                     ylabel=ylabel)


# --- sweep -----------------------------------------------------------------------

@dataclass
class SweepResult:
    """Plateau fidelity on a (g_2ph, g_ps) grid; rows follow g_2ph, columns g_ps."""

    g_2ph: np.ndarray
    g_ps: np.ndarray
    fidelity: np.ndarray

    def __post_init__(self):
        self.g_2ph = np.asarray(self.g_2ph, dtype=float)
        self.g_ps = np.asarray(self.g_ps, dtype=float)
        self.fidelity = np.asarray(self.fidelity, dtype=float)
        if self.fidelity.shape != (self.g_2ph.size, self.g_ps.size):
            raise ValueError("fidelity matrix does not match the axes")
        finite = self.fidelity[np.isfinite(self.fidelity)]
        if np.any((finite < 0) | (finite > 1)):
            raise ValueError("fidelities must lie in [0, 1]")

    @property
    def optimum(self) -> tuple[int, int]:
        if not np.any(np.isfinite(self.fidelity)):
            raise ValueError("sweep has no valid points")
        return tuple(int(i) for i in np.unravel_index(np.nanargmax(self.fidelity), self.fidelity.shape))

    @property
    def optimum_value(self) -> float:
        return float(self.fidelity[self.optimum])

    @property
    def optimum_point(self) -> tuple[float, float]:
        i, j = self.optimum
        return float(self.g_2ph[i]), float(self.g_ps[j])

    def largest_region(self, threshold: float = 0.9) -> int:
        """Cells in the largest 4-connected region with fidelity >= threshold."""
        mask = np.nan_to_num(self.fidelity, nan=-1.0) >= threshold
        seen = np.zeros_like(mask)
        best = 0
        rows, cols = mask.shape
        for i0 in range(rows):
            for j0 in range(cols):
                if not mask[i0, j0] or seen[i0, j0]:
                    continue
                stack, size = [(i0, j0)], 0
                seen[i0, j0] = True
                while stack:
                    i, j = stack.pop()
                    size += 1
                    for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                        if 0 <= a < rows and 0 <= b < cols and mask[a, b] and not seen[a, b]:
                            seen[a, b] = True
                            stack.append((a, b))
                best = max(best, size)
        return best

    def to_csv(self, path=None) -> str:
        rows = [["g_2ph", "g_ps", "fidelity"]]
        for i, g2 in enumerate(self.g_2ph):
            for j, gp in enumerate(self.g_ps):
                rows.append([repr(float(g2)), repr(float(gp)), repr(float(self.fidelity[i, j]))])
        text = "".join(",".join(r) + "\r\n" for r in rows)
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        body = [line.split(",") for line in text.strip().splitlines()[1:]]
        g2 = sorted({float(r[0]) for r in body})
        gp = sorted({float(r[1]) for r in body})
        fid = np.full((len(g2), len(gp)), np.nan)
        for r in body:
            fid[g2.index(float(r[0])), gp.index(float(r[1]))] = float(r[2])
        return cls(g2, gp, fid)

    def to_svg(self, title: str = "plateau fidelity") -> str:
        i, j = self.optimum
        # image rows run top-down, so flip g_2ph to put small couplings at the bottom
        return heatmap(self.fidelity[::-1], self.g_ps, self.g_2ph[::-1], title=title,
                       xlabel="g_ps / kappa_1ph", ylabel="g_2ph / kappa_1ph",
                       marker=(self.g_2ph.size - 1 - i, j))


def _axis(axis, default) -> np.ndarray:
    if axis is None:
        axis = default
    if not isinstance(axis, dict):
        values = np.asarray(axis, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("sweep axis is empty")
        return values
    start, stop, step = float(axis["start"]), float(axis["stop"]), float(axis["step"])
    if not step > 0:
        raise ValueError("sweep step must be positive")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def _sweep_point(args):
    base, g2, gp, ratio, times, full_model, storage_dim, alpha, plan = args
    try:
        p = base.replace(g_2ph=g2, g_ps=gp, eps_r1=ratio * g2)
        if full_model:
            model = build_model("three_mode", p)
            dim = p.layout.dims[0]
        else:
            eff = p.effective(storage_dim)
            model = effective_model(eff)
            dim = eff.dim
        target = cat_state(alpha, +1, dim)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            series = evolve(model, _vacuum(model), times, plan,
                            observers={"fidelity": lambda r: fidelity(_storage(r), target)},
                            diagnostics=False)
        return series.final("fidelity")
    except (CatstabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("sweep point g_2ph=%g g_ps=%g failed: %s", g2, gp, exc)
        return math.nan


def sweep(config: ExperimentConfig, threads: int | None = None, full_model: bool = False) -> SweepResult:
    """Fidelity at the end of the time grid, from vacuum, on the (g_2ph, g_ps) grid.

    ``eps_r1`` follows ``eps_ratio * g_2ph`` (grid key, default 4) so the
    target cat amplitude stays fixed. Points use the effective storage model
    with mapped rates unless ``full_model`` is set. Failed points are NaN.
    """
    grid = config.grid
    try:
        g2_axis = _axis(grid.get("g_2ph"), SWEEP_G_2PH)
        gp_axis = _axis(grid.get("g_ps"), SWEEP_G_PS)
    except (KeyError, TypeError, ValueError) as exc:
        raise config.error(f"invalid sweep axis: {exc}", "grid") from None
    ratio = float(grid.get("eps_ratio", SWEEP_EPS_RATIO))
    if config.model == "effective":
        raise config.error("sweep takes three_mode parameters (mapped to the effective model)", "model")
    base = config.model_params()
    if full_model and base.layout.n_modes != 3:
        raise config.error("full-model sweep needs a three-mode layout", "layout")
    if full_model:
        warnings.warn("full three-mode sweep: expect minutes per grid point", RuntimeWarning, stacklevel=2)
    alpha = config.target_alpha if config.target_alpha is not None else math.sqrt(ratio)
    times = config.time_grid()
    plan = config.propagator_plan()
    storage_dim = int(grid.get("storage_dim", DEFAULT_STORAGE_DIM))
    jobs = [(base, float(g2), float(gp), ratio, times, full_model, storage_dim, alpha, plan)
            for g2 in g2_axis for gp in gp_axis]
    threads = threads or os.cpu_count() or 1
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(_sweep_point, jobs))
    else:
        values = [_sweep_point(job) for job in jobs]
    return SweepResult(g2_axis, gp_axis, np.array(values).reshape(g2_axis.size, gp_axis.size))


# --- experiments -----------------------------------------------------------------

def _run_evolve(config, out: Path, summary: dict) -> list[str]:
    params = config.model_params()
    model = build_model(config.model, params)
    _hierarchy(params, summary)
    dim = model.layout.dims[0]
    target = _target(config, params, dim)
    series = evolve(model, _vacuum(model), config.time_grid(), config.propagator_plan(), observers={
        "fidelity": lambda r: fidelity(_storage(r), target),
        "mean_photon": lambda r: mean_photon(_storage(r)),
        "parity": lambda r: mean_parity(_storage(r)),
    })
    series.to_csv(out / "fidelity.csv")
    summary.update(final_fidelity=series.final("fidelity"), plateau=plateau(series["fidelity"]),
                   max_trace_error=float(series["trace_error"].max()),
                   min_eigenvalue=float(series["min_eigenvalue"].min()))
    return ["fidelity.csv"]


def _steady(config, params):
    model = build_model(config.model, params)
    rho = steady_state(model, plan=config.propagator_plan())
    return model, rho


def _run_steady(config, out: Path, summary: dict) -> list[str]:
    params = config.model_params()
    _hierarchy(params, summary)
    model, rho = _steady(config, params)
    storage = _storage(rho)
    target = _target(config, params, storage.dim)
    pmf = photon_pmf(storage)
    lines = ["n,probability"] + [f"{n},{p!r}" for n, p in enumerate(pmf.tolist())]
    (out / "photon_distribution.csv").write_bytes(("\r\n".join(lines) + "\r\n").encode())
    summary.update(fidelity=fidelity(storage, target), mean_photon=mean_photon(storage),
                   parity=mean_parity(storage), residual=steady_state_residual(model, rho))
    return ["photon_distribution.csv"]


def _run_wigner(config, out: Path, summary: dict, threads: int) -> list[str]:
    params = config.model_params()
    _, rho = _steady(config, params)
    storage = _storage(rho)
    extent = float(config.grid.get("extent", 4.0))
    points = int(config.grid.get("points", 81))
    axis = default_axis(extent, points)
    w = wigner(storage, axis, axis, method=config.grid.get("method", "laguerre"), workers=threads)
    w.to_csv(out / "wigner.csv")
    summary.update(min_w=w.min(), w_origin=w.at(0.0, 0.0), integral=w.integral(),
                   parity=mean_parity(storage))
    return ["wigner.csv"]


def _run_sweep(config, out: Path, summary: dict, threads: int, full_model: bool) -> list[str]:
    result = sweep(config, threads=threads, full_model=full_model)
    result.to_csv(out / "sweep.csv")
    g2, gp = result.optimum_point
    summary.update(optimum_value=result.optimum_value, optimum_g_2ph=g2, optimum_g_ps=gp,
                   region_above_0_9=result.largest_region(0.9),
                   failed_points=int(np.count_nonzero(~np.isfinite(result.fidelity))),
                   full_model=full_model)
    return ["sweep.csv"]


def _run_compare(config, out: Path, summary: dict) -> list[str]:
    params = config.model_params()
    _hierarchy(params, summary)
    grid = None
    if config.grid:
        grid = config.time_grid()
    comparison = reduction.compare_models(params, grid, config.propagator_plan())
    series = comparison.series
    series.to_csv(out / "compare.csv")
    summary.update(max_gap=comparison.max_gap, final_full=series.final("fidelity_full"),
                   final_reduced=series.final("fidelity_reduced"))
    return ["compare.csv"]


def _run_reduce(config, out: Path, summary: dict) -> list[str]:
    deltas = config.grid.get("deltas", [0.02, 0.12, 0.4])
    n_tilde = int(config.grid.get("n_tilde", config.params.get("n_tilde", 2)))
    try:
        fits = [reduction.fit_decay_rate(float(d), n_tilde) for d in deltas]
    except (TypeError, ValueError) as exc:
        raise config.error(f"invalid delta grid: {exc}", "deltas") from None
    reduction.decay_fits_to_csv(fits, out / "decay_fits.csv")
    summary.update(max_relative_error=max(f.relative_error for f in fits),
                   log_slope_rates=[f.log_slope_rate for f in fits])
    return ["decay_fits.csv"]


def _hierarchy(params, summary):
    if isinstance(params, ThreeModeParams):
        issues = check_rate_hierarchy(params, emit=True)
        if issues:
            summary["hierarchy_warnings"] = issues


# --- plots -----------------------------------------------------------------------

def emit_plots(out_dir) -> list[str]:
    """Render an SVG next to every known CSV artifact in ``out_dir``."""
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"no run directory {out}")
    written = []
    renderers = {
        "fidelity.csv": ("fidelity.svg", _plot_fidelity),
        "compare.csv": ("compare.svg", _plot_compare),
        "wigner.csv": ("wigner.svg", _plot_wigner),
        "sweep.csv": ("sweep.svg", lambda text: SweepResult.from_csv(text).to_svg()),
        "decay_fits.csv": ("decay_fits.svg", _plot_fits),
        "photon_distribution.csv": ("photon_distribution.svg", _plot_pmf),
    }
    found = False
    for name, (svg_name, render) in renderers.items():
        path = out / name
        if not path.exists():
            continue
        found = True
        (out / svg_name).write_text(render(path.read_text()))
        written.append(svg_name)
    if not found:
        raise FileNotFoundError(f"no artifacts to plot in {out}")
    return written


def _plot_fidelity(text):
    series = TimeSeries.from_csv(text)
    return timeseries_plot(series, ["fidelity"], "fidelity to the target cat")


def _plot_compare(text):
    series = TimeSeries.from_csv(text)
    return timeseries_plot(series, ["fidelity_full", "fidelity_reduced"],
                           "three-mode vs effective model")


def _plot_wigner(text):
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    xs = sorted({float(r[0]) for r in rows})
    ps = sorted({float(r[1]) for r in rows})
    values = np.array([float(r[2]) for r in rows]).reshape(len(xs), len(ps))
    from .observables import WignerGrid

    return WignerGrid(np.array(xs), np.array(ps), values).to_svg()


def _plot_fits(text):
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    delta = [float(r[0]) for r in rows]
    return line_plot(delta, {"fitted": [float(r[2]) for r in rows],
                             "formula": [float(r[3]) for r in rows]},
                     title="parity-selection rate", xlabel="delta", ylabel="rate / kappa_r2")


def _plot_pmf(text):
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    return line_plot([float(r[0]) for r in rows], {"P(n)": [float(r[1]) for r in rows]},
                     title="steady photon distribution", xlabel="n", ylabel="probability")


# --- entry point -----------------------------------------------------------------

@dataclass
class RunResult:
    out_dir: Path
    artifacts: list[str]
    summary: dict[str, Any]


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def run(config: ExperimentConfig, out_dir=None, threads: int | None = None,
        full_model: bool = False) -> RunResult:
    """Run one experiment and persist its artifacts, plots and manifest."""
    out = Path(out_dir or config.output)
    threads = threads or os.cpu_count() or 1
    if full_model and config.experiment != "sweep":
        log.warning("--full-model only affects the sweep experiment; model %r is used as configured",
                    config.model)
    # resolve parameters before touching the filesystem so config errors leave no outputs
    resolved = dict(config.to_dict(), output=str(out))
    resolved["params"] = params_to_dict(config.model_params())
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(_jsonable(resolved), indent=2, sort_keys=True) + "\n")

    summary: dict[str, Any] = {}
    start = time.perf_counter()
    kind = config.experiment
    if kind == "evolve":
        artifacts = _run_evolve(config, out, summary)
    elif kind == "steady":
        artifacts = _run_steady(config, out, summary)
    elif kind == "wigner":
        artifacts = _run_wigner(config, out, summary, threads)
    elif kind == "sweep":
        artifacts = _run_sweep(config, out, summary, threads, full_model)
    elif kind == "compare":
        artifacts = _run_compare(config, out, summary)
    else:
        artifacts = _run_reduce(config, out, summary)
    elapsed = time.perf_counter() - start
    artifacts = artifacts + emit_plots(out)

    manifest = {
        "experiment": kind,
        "model": config.model,
        "seed": config.seed,
        "artifacts": ["config.json"] + artifacts,
        "summary": summary,
        "timings": {"run_seconds": elapsed},
        "versions": {
            "catstab": _version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return RunResult(out, manifest["artifacts"], summary)


def _version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"
