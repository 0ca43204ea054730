import json
import math
from pathlib import Path

import numpy as np
import pytest

from catstab.errors import ConfigError
from catstab.fock import DensityMatrix, cat_state, fock_state
from catstab.harness import (
    ExperimentConfig,
    SweepResult,
    emit_plots,
    plateau,
    run,
    sweep,
)
from catstab.lindblad import TimeSeries, evolve
from catstab.models import EffectiveParams, ThreeModeParams, effective_model
from catstab.observables import fidelity

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
VACUUM_FIDELITY = 2 * math.exp(-4) / (1 + math.exp(-8))

EVOLVE = {
    "experiment": "evolve",
    "model": "effective",
    "params": {"kappa_1ph": 1.0, "kappa_2ph": 250.0, "kappa_ps": 760.0, "n_tilde": 2, "dim": 25},
    "target_alpha": 2.0,
    "grid": {"t_end": 1.0, "samples": 21},
}


def config(data=None, **changes):
    data = dict(data or EVOLVE)
    data.update(changes)
    return ExperimentConfig.from_json(json.dumps(data, indent=2))


def shrink(data):
    """Reduced-size copy of a bundled config for quick runs."""
    data = json.loads(json.dumps(data))
    grid = data.setdefault("grid", {})
    params = data.get("params", {})
    if data["model"] == "three_mode" and data["experiment"] != "sweep":
        params["layout"] = [8, 2, 2]
    if data["experiment"] == "evolve":
        grid["samples"] = 11
    elif data["experiment"] == "wigner":
        grid["points"] = 9
    elif data["experiment"] == "sweep":
        grid.update(g_2ph=[100, 250], g_ps=[200, 400], samples=11)
    elif data["experiment"] == "compare":
        grid.update(t_end=0.05, samples=6)
    elif data["experiment"] == "reduce":
        grid["deltas"] = [0.12]
    return data


class TestConfig:
    def test_fields(self):
        cfg = config()
        assert cfg.model_params().eps_2ph == 500.0
        assert cfg.time_grid().size == 21

    def test_unknown_key_is_line_anchored(self):
        text = json.dumps(dict(EVOLVE, colour="red"), indent=2)
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_json(text)
        assert info.value.line == text.splitlines().index('  "colour": "red"') + 1
        assert f"line {info.value.line}" in str(info.value)

    def test_unknown_parameter(self):
        data = json.loads(json.dumps(EVOLVE))
        data["params"]["kappa_3ph"] = 1.0
        text = json.dumps(data, indent=2)
        with pytest.raises(ConfigError, match="kappa_3ph") as info:
            ExperimentConfig.from_json(text)
        assert '"kappa_3ph"' in text.splitlines()[info.value.line - 1]

    def test_bad_json(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_json('{\n  "experiment": "evolve",\n  oops\n}')
        assert info.value.line == 3

    @pytest.mark.parametrize("grid", [{"times": []}, {"samples": 0}, {"t_end": 0.0}])
    def test_empty_time_grid(self, grid):
        with pytest.raises(ConfigError, match="empty"):
            config(grid=grid)

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            config(experiment="dance")

    def test_missing_experiment(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json("{}")

    def test_bad_plan(self):
        with pytest.raises(ConfigError, match="plan"):
            config(plan={"method": "euler"})

    def test_compare_needs_three_mode(self):
        with pytest.raises(ConfigError):
            config(experiment="compare")

    def test_explicit_times(self):
        cfg = config(grid={"times": [0.0, 0.1, 0.5]})
        assert np.array_equal(cfg.time_grid(), [0.0, 0.1, 0.5])
        with pytest.raises(ConfigError):
            config(grid={"times": [0.0, 0.5, 0.1]})

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
    def test_bundled_configs_validate(self, path):
        cfg = ExperimentConfig.load(path)
        assert cfg.experiment in path.name or cfg.experiment in ("steady", "compare", "reduce")
        assert ExperimentConfig.from_json(json.dumps(cfg.to_dict())).to_dict() == cfg.to_dict()


class TestRun:
    def test_evolve_artifacts(self, tmp_path):
        result = run(config(), tmp_path / "a", threads=1)
        assert result.summary["final_fidelity"] >= 0.9
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == ["config.json", "fidelity.csv", "fidelity.svg", "manifest.json"]
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert set(manifest["versions"]) == {"catstab", "numpy", "scipy", "python"}
        assert "run_seconds" in manifest["timings"]
        as_run = json.loads((tmp_path / "a" / "config.json").read_text())
        assert as_run["params"]["eps_2ph"] == 500.0

    def test_deterministic(self, tmp_path):
        run(config(), tmp_path / "a", threads=1)
        run(config(), tmp_path / "b", threads=1)
        for name in ("fidelity.csv", "fidelity.svg", "config.json"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            if name == "config.json":
                a, b = a.replace(b"/a", b""), b.replace(b"/b", b"")
            assert a == b

    def test_csv_format(self, tmp_path):
        run(config(), tmp_path, threads=1)
        raw = (tmp_path / "fidelity.csv").read_bytes()
        assert raw.startswith(b"time,fidelity,mean_photon,parity,")
        assert raw.count(b"\r\n") == 22

    def test_wigner(self, tmp_path):
        data = json.loads((CONFIGS / "effective_wigner.json").read_text())
        data["grid"] = {"extent": 2.0, "points": 21}
        result = run(ExperimentConfig.from_json(json.dumps(data)), tmp_path, threads=2)
        assert result.summary["min_w"] < 0
        assert (tmp_path / "wigner.csv").exists() and (tmp_path / "wigner.svg").exists()

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
    def test_bundled_configs_run_reduced(self, path, tmp_path, quiet):
        data = shrink(json.loads(path.read_text()))
        result = run(ExperimentConfig.from_json(json.dumps(data)), tmp_path, threads=1)
        assert (tmp_path / "manifest.json").exists()
        assert len(result.artifacts) >= 3


class TestRateScaling:
    @pytest.mark.parametrize("lam", [0.5, 3.0])
    def test_fidelity_invariant(self, lam, quiet):
        base = EffectiveParams(kappa_2ph=25.0, kappa_ps=76.0, eps_2ph=50.0, dim=20)
        scaled = EffectiveParams(kappa_1ph=lam, kappa_2ph=25.0 * lam, kappa_ps=76.0 * lam,
                                 eps_2ph=50.0 * lam, dim=20)
        target = cat_state(2.0, "+", 20)
        rho0 = DensityMatrix.from_state(fock_state(0, 20))
        grid = np.linspace(0, 1.0, 11)
        obs = {"F": lambda r: fidelity(r, target)}
        a = evolve(effective_model(base), rho0, grid, observers=obs)
        b = evolve(effective_model(scaled), rho0, grid / lam, observers=obs)
        assert np.max(np.abs(a["F"] - b["F"])) < 1e-8


class TestSweep:
    def sweep_config(self, **grid):
        data = {
            "experiment": "sweep",
            "model": "three_mode",
            "params": {"kappa_r1": 1000.0, "kappa_r2": 1000.0, "chi_sr2": 25000.0},
            "grid": dict({"samples": 11}, **grid),
        }
        return ExperimentConfig.from_json(json.dumps(data))

    def test_single_point_matches_evolve(self):
        result = sweep(self.sweep_config(g_2ph=[250], g_ps=[400]), threads=1)
        p = ThreeModeParams(g_2ph=250.0, g_ps=400.0, eps_r1=1000.0).effective(25)
        target = cat_state(2.0, "+", 25)
        series = evolve(effective_model(p), DensityMatrix.from_state(fock_state(0, 25)),
                        np.linspace(0, 1, 11), observers={"F": lambda r: fidelity(r, target)})
        assert result.fidelity.shape == (1, 1)
        assert result.fidelity[0, 0] == pytest.approx(series.final("F"), abs=1e-12)

    def test_zero_couplings_row(self):
        result = sweep(self.sweep_config(g_2ph=[0], g_ps=[100, 400]), threads=1)
        assert np.allclose(result.fidelity, VACUUM_FIDELITY, atol=1e-10)

    def test_parallel_matches_serial(self):
        cfg = self.sweep_config(g_2ph=[100, 250], g_ps=[200, 400])
        assert np.array_equal(sweep(cfg, threads=1).fidelity, sweep(cfg, threads=2).fidelity)

    def test_effective_model_rejected(self):
        with pytest.raises(ConfigError):
            sweep(config(experiment="sweep"))

    def test_bad_axis(self):
        with pytest.raises(ConfigError):
            sweep(self.sweep_config(g_2ph={"start": 0, "stop": 10, "step": 0}), threads=1)


class TestSweepResult:
    def result(self):
        fid = np.array([[0.5, 0.95, 0.2], [0.92, 0.91, 0.93], [0.1, np.nan, 0.99]])
        return SweepResult([50.0, 100.0, 150.0], [100.0, 150.0, 200.0], fid)

    def test_optimum(self):
        r = self.result()
        assert r.optimum == (2, 2)
        assert r.optimum_value == 0.99
        assert r.optimum_point == (150.0, 200.0)

    def test_largest_region(self):
        # (0,1), the whole middle row and (2,2) form one 4-connected patch
        assert self.result().largest_region(0.9) == 5
        assert self.result().largest_region(0.94) == 1

    def test_csv_round_trip(self):
        r = self.result()
        back = SweepResult.from_csv(r.to_csv())
        assert np.array_equal(back.fidelity, r.fidelity, equal_nan=True)

    def test_svg_marker(self):
        svg = self.result().to_svg()
        assert svg.count('class="optimum"') == 1
        # optimum at the largest g_2ph sits in the top row, rightmost column
        assert 'class="optimum" x="406.67" y="60.00"' in svg

    def test_range_check(self):
        with pytest.raises(ValueError):
            SweepResult([1.0], [1.0], [[1.5]])


class TestPlots:
    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            emit_plots(tmp_path / "nope")

    def test_no_artifacts(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            emit_plots(tmp_path)

    def test_single_series(self, tmp_path):
        TimeSeries([0.0, 1.0], {"fidelity": [0.1, 0.9]}).to_csv(tmp_path / "fidelity.csv")
        assert emit_plots(tmp_path) == ["fidelity.svg"]
        assert (tmp_path / "fidelity.svg").read_text().count("<polyline") == 1

    def test_byte_identical(self, tmp_path):
        TimeSeries([0.0, 1.0], {"fidelity": [0.1, 0.9]}).to_csv(tmp_path / "fidelity.csv")
        emit_plots(tmp_path)
        first = (tmp_path / "fidelity.svg").read_bytes()
        emit_plots(tmp_path)
        assert (tmp_path / "fidelity.svg").read_bytes() == first


def test_plateau():
    assert plateau(np.r_[np.linspace(0, 0.9, 90), np.full(10, 0.9)])
    assert not plateau(np.linspace(0, 1, 100))
