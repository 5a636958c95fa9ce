import csv

import numpy as np
import pytest

from nsgp.design import (
    DesignConfig,
    PoolSpec,
    alm_select,
    pool_make,
    run_sequential,
    select_max,
)
from nsgp.particles import init_particles
from nsgp.predict import Dataset
from nsgp.testbed import eval_grid, get_function

PEAK = get_function("peak")


def peak_sim(x):
    return float(PEAK(np.asarray(x)[None])[0])


def peak_config(**kw):
    args = dict(
        t0=4, T=15, pool=PoolSpec("remaining"), initial="subset",
        points=np.linspace(-2, 2, 15)[:, None], n_particles=60, init_moves=2,
    )
    args.update(kw)
    return DesignConfig(**args)


class TestSelection:
    def test_argmax(self):
        assert select_max(np.array([0.5, 0.2, 0.4]) ** 2) == 0
        assert select_max([0.1, 0.3, 0.2]) == 1

    def test_ties_go_to_lowest_index(self):
        assert select_max([0.0, 0.0, 0.0]) == 0
        assert select_max([1.0, 2.0, 2.0]) == 1
        assert select_max([1.0, 2.0, 2.0 + 1e-15]) == 1

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            select_max([])

    def test_training_candidates_tie(self):
        X = np.linspace(0, 1, 6)[:, None]
        ps = init_particles(Dataset(X, np.sin(5 * X[:, 0])), N=5, mode="stationary", nugget=0.0, seed=1)
        i, point, score = alm_select(ps, X)
        assert score < 1e-10 and i == 0 and point[0] == 0.0

    def test_alm_empty_pool(self):
        X = np.linspace(0, 1, 6)[:, None]
        ps = init_particles(Dataset(X, X[:, 0]), N=3, seed=1)
        with pytest.raises(ValueError, match="empty"):
            alm_select(ps, np.empty((0, 1)))

    def test_alm_prefers_gap(self):
        X = np.array([[0.0], [0.1], [0.2], [0.3], [1.0]])
        ps = init_particles(Dataset(X, X[:, 0] ** 2), N=20, mode="stationary", seed=2)
        i, _, _ = alm_select(ps, [[0.15], [0.65], [0.25]])
        assert i == 1


class TestPool:
    def test_grid(self):
        P = pool_make(PoolSpec("grid", 30), 2, [[0, 1], [0, 1]], np.random.default_rng(0))
        assert P.shape == (900, 2)

    def test_lhd(self):
        P = pool_make(PoolSpec("lhd", 1000), 6, np.tile([0.0, 1.0], (6, 1)), np.random.default_rng(0))
        assert P.shape == (1000, 6)
        for l in range(6):
            assert np.array_equal(np.sort(np.floor(P[:, l] * 1000)), np.arange(1000))

    def test_explicit(self):
        pts = np.linspace(-2, 2, 11)[:, None]
        np.testing.assert_array_equal(pool_make(PoolSpec("explicit", points=pts), 1, [[-2, 2]], None), pts)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            PoolSpec("sobol")

    def test_pool_smaller_than_budget(self):
        cfg = DesignConfig(t0=4, T=20, pool=PoolSpec("explicit", points=np.zeros((3, 1))), n_particles=5)
        with pytest.raises(ValueError, match="budget"):
            run_sequential(peak_sim, cfg, PEAK.bounds)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kw",
        [dict(t0=2), dict(T=3), dict(threshold=0.0), dict(aggregation="max"), dict(initial="sobol")],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            peak_config(**kw).validate(1)


class TestRunSequential:
    def test_peak_protocol(self):
        trace = run_sequential(
            peak_sim, peak_config(), PEAK.bounds, seed=3, truth=PEAK, eval_points=eval_grid(PEAK.bounds, 200)
        )
        assert len(trace.records) == 11
        X = np.vstack([trace.initial_X, trace.selected])
        np.testing.assert_allclose(np.sort(X[:, 0]), np.linspace(-2, 2, 15))
        assert [r.t for r in trace.records] == list(range(5, 16))
        assert all(r.rmse is not None for r in trace.records)
        assert trace.final_rmse == pytest.approx(trace.records[-1].rmse, rel=1e-12)
        assert trace.final_prediction.mean.shape == (200,)

    def test_no_point_selected_twice(self):
        trace = run_sequential(peak_sim, peak_config(T=12), PEAK.bounds, seed=4)
        sel = trace.selected[:, 0]
        assert len(set(sel)) == len(sel)
        assert not set(sel) & set(trace.initial_X[:, 0])

    def test_zero_budget(self):
        trace = run_sequential(peak_sim, peak_config(T=4), PEAK.bounds, seed=1, truth=PEAK, eval_points=[[0.0], [1.0]])
        assert trace.records == [] and trace.final_prediction.mean.shape == (2,)

    def test_deterministic(self, tmp_path):
        paths = []
        for k in range(2):
            trace = run_sequential(peak_sim, peak_config(T=9), PEAK.bounds, seed=5, timing=False)
            paths.append(tmp_path / f"trace{k}.csv")
            trace.write_csv(paths[-1])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_threshold_stops_immediately_on_training_candidates(self):
        pts = np.linspace(-2, 2, 8)[:, None]
        cfg = DesignConfig(
            t0=8, T=16, initial="explicit", points=pts, pool=PoolSpec("explicit", points=pts),
            threshold=1e-6, n_particles=10, init_moves=0,
        )
        trace = run_sequential(peak_sim, cfg, PEAK.bounds, mode="stationary", nugget=0.0, seed=0)
        assert trace.records == [] and trace.stopped_by == "threshold"

    def test_nonfinite_simulator(self):
        cfg = peak_config(T=6)
        with pytest.raises(ValueError, match="simulator returned nan"):
            run_sequential(lambda x: float("nan"), cfg, PEAK.bounds)

    def test_csv_layout(self, tmp_path):
        f = get_function("well2")
        cfg = DesignConfig(t0=6, T=8, pool=PoolSpec("lhd", 20), n_particles=10)
        trace = run_sequential(
            lambda x: float(f(x[None])[0]), cfg, f.bounds, seed=2, truth=f, eval_points=eval_grid(f.bounds, 5)
        )
        trace.write_csv(tmp_path / "trace.csv")
        rows = list(csv.reader(open(tmp_path / "trace.csv")))
        assert rows[0] == ["iter", "t", "x1", "x2", "f", "max_sd", "rmse", "seconds"]
        assert len(rows) == 3 and rows[1][0] == "1" and rows[2][1] == "8"

    def test_rmse_column_empty_without_truth(self, tmp_path):
        trace = run_sequential(peak_sim, peak_config(T=6), PEAK.bounds, seed=2)
        trace.write_csv(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert all(r[5] == "" for r in rows[1:])
