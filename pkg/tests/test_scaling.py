import math

import numpy as np
import pytest

from sobolev_fno.burgers import SolverConfig
from sobolev_fno.datagen import SamplerConfig, build_dataset
from sobolev_fno.fno import FnoConfig
from sobolev_fno.scaling import (
    SweepRecord,
    benchmark_exponent,
    default_configs,
    fit_power_law,
    parse_config,
    read_records,
    run_sweep,
    scaling_report,
    write_records,
    write_report,
)
from sobolev_fno.train import TrainConfig

PUBLISHED_BEST = [(74_209, 6.87e-7), (237_137, 6.01e-7), (549_569, 4.80e-7), (1_819_553, 4.93e-7)]


def hand_ols(points):
    # independent oracle: normal equations solved with numpy.polyfit
    x = np.log([p[0] for p in points])
    y = np.log([p[1] for p in points])
    slope, intercept = np.polyfit(x, y, 1)
    return -slope, math.exp(intercept)


def records(best, final=None):
    final = final or best
    return [SweepRecord(0, 0, n, f, b, 1, float("nan")) for (n, b), (_, f) in zip(best, final)]


class TestFit:
    def test_synthetic_exact(self):
        fit = fit_power_law([(N, 3 * N ** -0.5) for N in (1e2, 1e3, 1e4)])
        assert fit.C == pytest.approx(3, rel=1e-12)
        assert fit.alpha == pytest.approx(0.5, abs=1e-12)
        assert fit.r_squared == pytest.approx(1, abs=1e-12)

    def test_two_points_interpolate(self):
        fit = fit_power_law([(10, 1.0), (1000, 0.01)])
        assert fit.alpha == pytest.approx(1.0, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(fit.predict([10, 1000]), [1.0, 0.01], rtol=1e-12)

    def test_published_table(self):
        fit = fit_power_law(PUBLISHED_BEST)
        alpha, C = hand_ols(PUBLISHED_BEST)
        assert fit.alpha == pytest.approx(alpha, abs=1e-12)
        assert fit.C == pytest.approx(C, rel=1e-10)
        assert 0.109 <= fit.alpha <= 0.119
        assert abs(fit.alpha - 0.114) <= 0.005
        assert 1.7e-6 <= fit.C <= 3.4e-6

    @pytest.mark.parametrize("lam", [1e-3, 0.5, 7.0])
    def test_scale_equivariance(self, lam):
        a = fit_power_law(PUBLISHED_BEST)
        b = fit_power_law([(N, lam * e) for N, e in PUBLISHED_BEST])
        assert b.alpha == pytest.approx(a.alpha, abs=1e-12)
        assert b.C == pytest.approx(lam * a.C, rel=1e-12)

    def test_residuals_vanish_on_log_linear_data(self):
        Ns = [3e3, 5e4, 2e5, 9e6]
        pts = [(N, 0.02 * N ** 0.3) for N in Ns]
        fit = fit_power_law(pts)
        assert np.max(np.abs(np.log(fit.predict(Ns)) - np.log([p[1] for p in pts]))) <= 1e-12

    @pytest.mark.parametrize("pts", [
        [(10, 1.0)],
        [(10, 1.0), (10, 2.0)],
        [(10, 1.0), (20, 0.0)],
        [(10, 1.0), (20, -1.0)],
        [(10, 1.0), (20, math.inf)],
    ])
    def test_rejects(self, pts):
        with pytest.raises(ValueError):
            fit_power_law(pts)


class TestBenchmark:
    @pytest.mark.parametrize("s, d, rate", [(1, 1, 1.0), (2, 1, 2.0), (3, 2, 1.5)])
    def test_values(self, s, d, rate):
        assert benchmark_exponent(s, d) == rate

    @pytest.mark.parametrize("s", [0.4, 0.5])
    def test_rejects_low_regularity(self, s):
        with pytest.raises(ValueError, match="s > d/2"):
            benchmark_exponent(s, 1)


class TestReport:
    def test_u_shape_on_final_epoch_data(self):
        # only the largest model's final loss is published; smaller ones use best-epoch values
        final = PUBLISHED_BEST[:3] + [(1_819_553, 8.63e-5)]
        rep = scaling_report(records(PUBLISHED_BEST, final), "final")
        assert rep["u_shape"]
        assert rep["fit"]["alpha"] < 0

    def test_u_shape_clear_on_best_epoch_data(self):
        rep = scaling_report(records(PUBLISHED_BEST), "best")
        assert not rep["u_shape"]
        assert rep["benchmark_exponent"] == 1.0
        assert rep["alpha_over_benchmark"] == pytest.approx(rep["fit"]["alpha"])

    def test_monotone_synthetic(self):
        pts = [(N, N ** -1.0) for N in (1e3, 1e4, 1e5)]
        assert not scaling_report(records(pts))["u_shape"]

    def test_benchmark_line(self):
        rep = scaling_report(records(PUBLISHED_BEST))
        p0, p3 = rep["points"][0], rep["points"][-1]
        assert p0["benchmark"] == p0["error"]
        assert p3["benchmark"] == pytest.approx(p0["error"] * 74_209 / 1_819_553, rel=1e-12)

    def test_aborted_excluded(self):
        recs = records(PUBLISHED_BEST)
        recs[1].aborted = True
        rep = scaling_report(recs)
        assert len(rep["points"]) == 3
        assert rep["excluded"] == ["0x0"]

    def test_needs_two_usable(self):
        with pytest.raises(ValueError, match=">= 2"):
            scaling_report(records(PUBLISHED_BEST[:1]))

    def test_write(self, tmp_path):
        rep = scaling_report(records(PUBLISHED_BEST))
        j, c = write_report(rep, tmp_path / "r.json", tmp_path / "r.csv")
        assert j.exists() and len(c.read_text().splitlines()) == 5


class TestRecords:
    def test_best_not_above_final(self):
        with pytest.raises(ValueError):
            SweepRecord(8, 32, 100, 1e-6, 2e-6, 3, 0.1)

    def test_round_trip(self, tmp_path):
        recs = records(PUBLISHED_BEST, [(n, 2 * e) for n, e in PUBLISHED_BEST])
        back = read_records(write_records(recs, tmp_path / "r.csv"))
        assert [(r.n_params, r.best_test_loss, r.final_test_loss) for r in back] == \
               [(r.n_params, r.best_test_loss, r.final_test_loss) for r in recs]

    def test_minimal_table(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("N,best_test_loss\n" + "".join(f"{n},{e}\n" for n, e in PUBLISHED_BEST))
        fit = fit_power_law((r.n_params, r.best_test_loss) for r in read_records(path))
        assert abs(fit.alpha - 0.114) <= 0.005

    def test_parse_config(self):
        assert parse_config("8x32") == FnoConfig(8, 32)
        with pytest.raises(ValueError):
            parse_config("eight")

    def test_default_param_counts(self):
        from sobolev_fno.fno import param_count
        assert [param_count(c) for c in default_configs()] == [74_209, 237_137, 549_569, 1_819_553]


@pytest.fixture(scope="module")
def tiny_data():
    return build_dataset(SamplerConfig(n=32, k_max=4), SolverConfig(n=32, dt=1e-2), 8, 4)


class TestSweep:
    def test_single_config(self, tiny_data):
        recs, results = run_sweep(tiny_data, [FnoConfig(2, 4)], TrainConfig(epochs=3, batch_size=4))
        assert len(recs) == 1 and recs[0].best_test_loss <= recs[0].final_test_loss
        assert "2x4" in results

    def test_deterministic(self, tiny_data, tmp_path):
        cfgs = [FnoConfig(2, 4), FnoConfig(3, 5)]
        tc = TrainConfig(epochs=2, batch_size=4)
        a, _ = run_sweep(tiny_data, cfgs, tc, out_dir=tmp_path / "a")
        b, _ = run_sweep(tiny_data, cfgs, tc, out_dir=tmp_path / "b")
        strip = lambda rs: [{k: v for k, v in r.to_dict().items() if k != "run_dir"} for r in rs]
        assert strip(a) == strip(b)
        assert (tmp_path / "a" / "run_2x4" / "curve.csv").read_bytes() == \
               (tmp_path / "b" / "run_2x4" / "curve.csv").read_bytes()

    def test_empty(self, tiny_data):
        with pytest.raises(ValueError):
            run_sweep(tiny_data, [], TrainConfig())


def test_multi_seed_medians(tiny_data):
    tc = TrainConfig(epochs=2, batch_size=4)
    recs, results = run_sweep(tiny_data, [FnoConfig(2, 4)], tc, seeds=[0, 1, 2])
    assert sorted(results) == ["2x4_seed0", "2x4_seed1", "2x4_seed2"]
    bests = sorted(r.curve.best_test_loss for r in results.values())
    assert recs[0].best_test_loss == bests[1]
    assert recs[0].best_test_loss <= recs[0].final_test_loss
