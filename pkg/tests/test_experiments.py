import json
import math

import numpy as np
import pytest

from chaosnet import models as M
from chaosnet.experiments import analysis as A
from chaosnet.experiments.config import ConfigError, ExperimentConfig, PRESETS, load_config, preset
from chaosnet.experiments.plotting import CsvParseError, heatmap_svg, plot, read_table
from chaosnet.experiments.sweep import run_sweep, run_trial, trial_seed
from chaosnet.numerics import pca

SYNTH = {"name": "synth2d", "kind": "clusters", "n_train": 200, "n_test": 200}


def small_cfg(tmp_path, rho=(0.5, 1.5), T=(1, 2), **over):
    d = dict(family="ffesn", model={"n": 20, "in_dim": 2, "n_classes": 4},
             axis1={"name": "rho", "values": list(rho)}, axis2={"name": "T", "values": list(T)},
             train={"epochs": 2, "lr": 0.05}, dataset=SYNTH, out_dir=str(tmp_path / "run"),
             ftmle_samples=10)
    d.update(over)
    return ExperimentConfig.from_dict(d)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = small_cfg(tmp_path)
        cfg.to_json(tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    @pytest.mark.parametrize("bad", [
        {"family": "gpt"},
        {"family": "ffesn", "trials": 0},
        {"family": "ffesn", "axis1": {"name": "rho", "values": []}},
        {"family": "ffesn", "train": {"lr": -1.0}},
        {"family": "ffesn", "unknown": 1},
    ])
    def test_invalid_rejected(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)

    def test_unreadable(self, tmp_path):
        (tmp_path / "x.json").write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "x.json")

    def test_presets_and_profiles(self):
        for name in PRESETS:
            desk, full = preset(name, "desk"), preset(name, "paper")
            assert desk.trials == 1 and full.trials == 5
            assert desk.train["epochs"] == 15 and full.train["epochs"] == 60
            assert desk.dataset["n_train"] == 10000 and full.dataset["n_train"] is None
            assert len(desk.axis1["values"]) < len(full.axis1["values"])
        assert preset("ffesn").axis1["name"] == "rho" and preset("lorenz").tol == 5e-5
        with pytest.raises(ConfigError):
            preset("hopfield")


class TestSweep:
    def test_grid_is_rectangular_and_written(self, tmp_path):
        cfg = small_cfg(tmp_path)
        grid = run_sweep(cfg, mle=True)
        assert grid.shape == (2, 2) and grid.complete
        assert [(c["i"], c["j"]) for c in grid.cells] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        _, rows = read_table(tmp_path / "run" / "grid.csv", numeric=("rho", "T", "loglabel"))
        assert len(rows) == 4 and {(r["rho"], r["T"]) for r in rows} == {(0.5, 1), (0.5, 2), (1.5, 1), (1.5, 2)}
        _, lrows = read_table(tmp_path / "run" / "lyapunov.csv", numeric=("rho", "mle"))
        assert [r["rho"] for r in lrows] == [0.5, 1.5]
        assert lrows[0]["mle"] < 0
        for c in grid.cells:
            expected = math.log(2 * 200) if c["epsilon"] == 0 else abs(math.log(c["epsilon"]))
            assert c["loglabel"] == pytest.approx(expected)
            assert c["mean_ftmle"] is not None

    def test_single_cell_matches_direct_run(self, tmp_path):
        cfg = small_cfg(tmp_path, rho=(1.2,), T=(3,))
        grid = run_sweep(cfg, mle=False)
        direct, _, _ = run_trial(cfg, 1.2, 3, trial_seed(cfg, 0, 0, 0))
        assert json.loads(json.dumps(direct)) == grid.cells[0]["trials"][0]

    def test_resume_equals_uninterrupted(self, tmp_path):
        a = small_cfg(tmp_path / "a")
        b = small_cfg(tmp_path / "b")
        partial = run_sweep(a, max_cells=3, mle=False)
        assert not partial.complete and sum(c is not None for c in partial.cells) == 3
        resumed = run_sweep(a, mle=False)
        whole = run_sweep(b, mle=False)
        assert resumed.cells == whole.cells
        assert (tmp_path / "a" / "run" / "grid.csv").read_bytes() == (tmp_path / "b" / "run" / "grid.csv").read_bytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_recorded(self, tmp_path):
        cfg = ExperimentConfig.from_dict(dict(
            family="linear", model={"in_dim": 2, "n_classes": 4}, train={"epochs": 2, "lr": 1e308},
            dataset=SYNTH, out_dir=str(tmp_path / "div"), ftmle_samples=0))
        grid = run_sweep(cfg, mle=False)
        assert grid.any_diverged and grid.cells[0]["status"] == "diverged"
        assert "diverged" in (tmp_path / "div" / "grid.csv").read_text()


class TestBifurcation:
    def test_linear_family_single_point(self):
        rows = A.bifurcation_scan("linear", [2.0, -1.0], T=20.0, mle_T=20.0)
        for r, F in zip(rows, [2.0, -1.0]):
            assert np.allclose(r["points"], F, atol=1e-6)
            assert r["mle"] == pytest.approx(-1.0, abs=1e-6)

    def test_csto_coupling_raises_mle(self):
        rows = A.bifurcation_scan("csto", [0.1, 17.8], T=2.0, n_init=1, mle_T=10.0)
        assert rows[1]["mle"] > rows[0]["mle"] + 0.1

    def test_extrema_of_oscillation(self):
        t = np.linspace(0, 40 * np.pi, 4001)
        ext = A.final_quarter_extrema(np.sin(t))
        assert np.allclose(np.abs(ext), 1.0, atol=1e-3) and len(ext) == 10

    def test_csv(self, tmp_path):
        rows = A.bifurcation_scan("linear", [1.0], T=5.0)
        A.write_bifurcation_csv(tmp_path / "b.csv", rows)
        header, recs = read_table(tmp_path / "b.csv", numeric=("param", "x", "mle"))
        assert header == ["param", "x", "mle", "status"] and len(recs) == 4


class TestPca:
    def test_compositional(self):
        m = M.ffesn(n=20, rho=1.2, T=2, in_dim=6, n_classes=3, seed=0)
        X = np.random.default_rng(0).uniform(size=(50, 6))
        res = A.pca_states(m, X, np.zeros(50), "final")
        S = m.forward_range(m.forward_range(X, 0, 1), 1, 2)
        _, proj, _ = pca(S, 2)
        assert np.allclose(res["projections"], proj)

    def test_initial_stage_identity_read_in(self, tmp_path):
        m = M.ffesn(n=6, rho=1.0, T=3, in_dim=6, n_classes=3, seed=0)
        m.layer("read_in").params["W"][:] = np.eye(6)
        X = np.random.default_rng(1).uniform(size=(40, 6))
        res = A.pca_states(m, X, np.arange(40) % 3, "initial", out_csv=tmp_path / "p.csv")
        _, proj, _ = pca(X, 2)
        assert np.allclose(res["projections"], proj)
        assert res["total_variance"] == pytest.approx(np.var(X, axis=0, ddof=1).sum())
        assert read_table(tmp_path / "p.csv")[0] == ["pc1", "pc2", "label"]


class TestNoiseStudy:
    def test_clean_limit_and_growth(self):
        m = M.ffesn(n=30, rho=1.0, T=1, in_dim=6, n_classes=3, seed=0)
        X = np.random.default_rng(0).uniform(size=(300, 6))
        y = m.predict(X)
        rows = A.noise_study(m, X, y, [1e12, 0.01], trials=2)
        by = {(r["kind"], r["sn_ratio"]): r for r in rows}
        for kind in ("observational", "dynamical"):
            assert by[(kind, 1e12)]["mean_error"] == 0.0
            assert by[(kind, 0.01)]["mean_error"] > 0.3


def test_boundary_mask():
    pts = np.array([[0.0, 0], [0.1, 0], [1.0, 0], [1.1, 0]])
    near = A.boundary_mask(pts, np.array([0, 1, 1, 1]), 0.2)
    assert near.tolist() == [True, True, False, False]


class TestPlot:
    def _grid_csv(self, path, rows=None):
        rows = rows or ["0.5,1,0.9,1.0,ok", "0.5,2,0.8,2.0,ok", "1.5,1,0.7,3.0,ok", "1.5,2,,,diverged"]
        path.write_text("rho,T,best_acc,loglabel,status\n" + "\n".join(rows) + "\n")
        return path

    def test_heatmap_cells_and_determinism(self, tmp_path):
        p = self._grid_csv(tmp_path / "g.csv")
        plot(p, tmp_path / "a.svg")
        plot(p, tmp_path / "b.svg")
        svg = (tmp_path / "a.svg").read_text()
        assert svg.count('class="cell"') == 4 and 'data-value="diverged"' in svg
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_lyapunov_overlay_position(self, tmp_path):
        g = self._grid_csv(tmp_path / "g.csv", ["0.5,0.5,0.9,1.0,ok", "0.5,1.0,0.8,2.0,ok"])
        (tmp_path / "l.csv").write_text("rho,mle,lyapunov_time\n0.5,2.0,0.5\n")
        svg = heatmap_svg(g, lyapunov_csv=tmp_path / "l.csv", cell=36)
        # 1/MLE = 0.5 lands on the centre of the first column: left margin 70 + half a cell
        assert 'class="lyapunov" cx="88"' in svg or 'cx="88.0' in svg

    def test_malformed_row(self, tmp_path):
        p = self._grid_csv(tmp_path / "g.csv", ["0.5,1,0.9,1.0,ok", "0.5,oops,0.8,2.0,ok"])
        with pytest.raises(CsvParseError) as err:
            plot(p, tmp_path / "x.svg")
        assert err.value.row == 3

    def test_scatter_and_ridgeline(self, tmp_path):
        (tmp_path / "s.csv").write_text("pc1,pc2,label\n0.1,0.2,0\n0.3,-0.1,1\n")
        plot(tmp_path / "s.csv", tmp_path / "s.svg")
        assert "<circle" in (tmp_path / "s.svg").read_text()
        (tmp_path / "f.csv").write_text("sample,layer,lambda\n0,res,0.1\n1,res,0.2\n2,res,-0.1\n")
        plot(tmp_path / "f.csv", tmp_path / "f.svg")
        assert (tmp_path / "f.svg").read_text().startswith("<svg") or "<svg" in (tmp_path / "f.svg").read_text()
