import csv
import json
import time

import numpy as np
import pytest

from sobolev_fno import __version__
from sobolev_fno.cli import ENV_OUTPUT_ROOT, main
from sobolev_fno.container import sha256_file
from sobolev_fno.datagen import load_dataset

PUBLISHED_TABLE = "N,best_test_loss\n74209,6.87e-7\n237137,6.01e-7\n549569,4.80e-7\n1819553,4.93e-7\n"
SMALL = ["--grid", "32", "--k-max", "4", "--dt", "0.01"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(ENV_OUTPUT_ROOT, raising=False)
    return tmp_path


@pytest.fixture
def small_data(work):
    assert main(["gen-data", "--n-train", "6", "--n-test", "2", *SMALL, "--out", "d.sfd"]) == 0
    return work / "d.sfd"


@pytest.fixture
def sweep_dir(small_data):
    argv = ["sweep", "--data", "d.sfd", "--configs", "2x4,3x6", "--epochs", "3",
            "--batch-size", "3", "--out-dir", "sw"]
    assert main(argv) == 0
    return small_data.parent / "sw"


class TestGenData:
    def test_smoke(self, work):
        t = time.perf_counter()
        assert main(["gen-data", "--n-train", "4", "--n-test", "1", "--out", "s.sfd"]) == 0
        assert time.perf_counter() - t < 10
        ds = load_dataset(work / "s.sfd")
        assert len(ds.train_u0) + len(ds.test_u0) == 5
        manifest = json.loads((work / "s.sfd.manifest.json").read_text())
        assert manifest["outputs"] == {str(work / "s.sfd"): sha256_file(work / "s.sfd")}
        assert manifest["version"] == __version__ and manifest["seeds"] == {"data": 0}

    def test_defaults(self, work):
        assert main(["gen-data", "--out", "full.sfd"]) == 0
        ds = load_dataset(work / "full.sfd")
        assert (len(ds.train_u0), len(ds.test_u0), ds.n) == (256, 64, 256)
        assert ds.nu == 0.01
        assert np.all(ds.train_h1 <= 0.3 + 1e-12) and np.all(ds.test_h1 <= 0.3 + 1e-12)

    def test_byte_identical(self, work):
        for name in ("a.sfd", "b.sfd"):
            assert main(["gen-data", "--n-train", "3", "--n-test", "1", *SMALL, "--out", name]) == 0
        assert (work / "a.sfd").read_bytes() == (work / "b.sfd").read_bytes()

    @pytest.mark.parametrize("bad", [["--n-train", "-1"], ["--n-train", "0", "--n-test", "0"],
                                     ["--radius", "0"], ["--grid", "31"], ["--nu", "-1"]])
    def test_usage_errors(self, work, bad, capsys):
        assert main(["gen-data", *bad, "--out", "x.sfd"]) == 2
        assert "usage:" in capsys.readouterr().err
        assert not (work / "x.sfd").exists()

    def test_output_root_env(self, work, monkeypatch):
        monkeypatch.setenv(ENV_OUTPUT_ROOT, str(work / "root"))
        assert main(["gen-data", "--n-train", "1", "--n-test", "0", *SMALL, "--out", "x.sfd"]) == 0
        assert (work / "root" / "x.sfd").exists() and not (work / "x.sfd").exists()


class TestTrain:
    def test_flat_curve_and_rerun(self, small_data):
        argv = ["train", "--data", "d.sfd", "--modes", "2", "--width", "4", "--epochs", "1",
                "--lr", "0", "--batch-size", "3"]
        assert main(argv + ["--out-dir", "r1"]) == 0
        assert main(argv + ["--out-dir", "r2"]) == 0
        root = small_data.parent
        assert len(rows(root / "r1" / "curve.csv")) == 1
        for name in ("curve.csv", "checkpoint_final.sfno", "checkpoint_best.sfno"):
            assert (root / "r1" / name).read_bytes() == (root / "r2" / name).read_bytes()

    def test_hundred_epochs(self, small_data):
        argv = ["train", "--data", "d.sfd", "--modes", "8", "--width", "32", "--epochs", "100",
                "--batch-size", "6", "--out-dir", "r"]
        assert main(argv) == 0
        recs = rows(small_data.parent / "r" / "curve.csv")
        assert [int(r["epoch"]) for r in recs] == list(range(1, 101))

    def test_modes_above_nyquist_rejected(self, small_data, capsys):
        assert main(["train", "--data", "d.sfd", "--modes", "17", "--width", "4", "--out-dir", "r"]) == 2
        assert "modes" in capsys.readouterr().err
        assert not (small_data.parent / "r").exists()

    def test_missing_dataset(self, work, capsys):
        assert main(["train", "--data", "nope.sfd"]) == 1
        assert "nope.sfd" in capsys.readouterr().err
        assert main(["train"]) == 2

    def test_corrupt_dataset(self, small_data, capsys):
        raw = bytearray(small_data.read_bytes())
        raw[-1] ^= 0xFF
        small_data.write_bytes(bytes(raw))
        assert main(["train", "--data", "d.sfd", "--modes", "2", "--width", "4"]) == 1
        assert "checksum" in capsys.readouterr().err

    def test_config_file_and_override(self, small_data):
        cfg = small_data.parent / "run.cfg"
        cfg.write_text("# smoke\nepochs = 2\nlr = 0\nbatch-size = 3\nmodes = 2\nwidth = 3\n")
        assert main(["train", "--config", str(cfg), "--data", "d.sfd", "--width", "4", "--out-dir", "r"]) == 0
        manifest = json.loads((small_data.parent / "r" / "manifest.json").read_text())
        conf = manifest["config"]
        assert (conf["epochs"], conf["lr"], conf["modes"], conf["width"]) == (2, 0.0, 2, 4)

    def test_unknown_config_key(self, small_data):
        cfg = small_data.parent / "bad.cfg"
        cfg.write_text("learning_rate = 1\n")
        assert main(["train", "--config", str(cfg), "--data", "d.sfd"]) == 2


class TestSweep:
    def test_records_and_reports(self, sweep_dir):
        recs = rows(sweep_dir / "records.csv")
        assert [int(r["n_params"]) for r in recs] == [1117, 2075]
        for which in ("best", "final"):
            rep = json.loads((sweep_dir / f"report_{which}.json").read_text())
            assert rep["which"] == which and len(rep["points"]) == 2

    def test_single_config_fit_rejected(self, small_data, capsys):
        argv = ["sweep", "--data", "d.sfd", "--configs", "2x4", "--epochs", "1", "--batch-size", "3",
                "--out-dir", "one"]
        assert main(argv) == 1
        assert ">= 2" in capsys.readouterr().err
        assert len(rows(small_data.parent / "one" / "records.csv")) == 1

    def test_fit_only_published_table(self, work):
        (work / "t.csv").write_text(PUBLISHED_TABLE)
        assert main(["sweep", "--fit-only", "t.csv", "--out-dir", "fit"]) == 0
        rep = json.loads((work / "fit" / "report_best.json").read_text())
        assert abs(rep["fit"]["alpha"] - 0.114) <= 0.005
        assert not rep["u_shape"]

    def test_bad_config_label(self, small_data):
        assert main(["sweep", "--data", "d.sfd", "--configs", "8by32"]) == 2


class TestExportFigures:
    def test_four_files(self, sweep_dir, small_data):
        assert main(["export-figures", "--sweep-dir", "sw", "--data", "d.sfd"]) == 0
        figs = sweep_dir / "figures"
        for name in ("fig1_qualitative.csv", "fig2_learning_curves.csv", "fig3_long_runs.csv",
                     "fig4_error_vs_params.csv"):
            assert len(rows(figs / name)) > 0
        fig4 = rows(figs / "fig4_error_vs_params.csv")
        n = np.array([float(r["N"]) for r in fig4])
        bench = np.array([float(r["benchmark_N^-1"]) for r in fig4])
        np.testing.assert_allclose(bench * n, bench[0] * n[0], rtol=1e-12)
        assert all(r["best_test_loss"] for r in fig4)
        fig1 = rows(figs / "fig1_qualitative.csv")
        assert len(fig1) == 32

    def test_missing_checkpoint_named(self, sweep_dir, capsys):
        (sweep_dir / "run_2x4" / "checkpoint_best.sfno").unlink()
        assert main(["export-figures", "--sweep-dir", "sw", "--data", "d.sfd"]) == 1
        assert "checkpoint_best.sfno" in capsys.readouterr().err

    def test_missing_records(self, small_data, capsys):
        (small_data.parent / "empty").mkdir()
        assert main(["export-figures", "--sweep-dir", "empty", "--data", "d.sfd"]) == 1
        assert "records.csv" in capsys.readouterr().err


class TestReplay:
    def test_reproduces_outputs(self, small_data):
        argv = ["train", "--data", "d.sfd", "--modes", "2", "--width", "4", "--epochs", "2",
                "--batch-size", "3", "--out-dir", "r"]
        assert main(argv) == 0
        manifest = small_data.parent / "r" / "manifest.json"
        before = json.loads(manifest.read_text())["outputs"]
        for p in before:
            (small_data.parent / p).unlink()
        assert main(["replay", "--manifest", str(manifest)]) == 0
        assert {p: sha256_file(p) for p in before} == before

    def test_detects_changed_input(self, small_data, capsys):
        argv = ["train", "--data", "d.sfd", "--modes", "2", "--width", "4", "--epochs", "1",
                "--batch-size", "3", "--out-dir", "r"]
        assert main(argv) == 0
        assert main(["gen-data", "--n-train", "6", "--n-test", "2", *SMALL, "--seed", "1", "--out", "d.sfd"]) == 0
        assert main(["replay", "--manifest", "r/manifest.json"]) == 1
        assert "differs" in capsys.readouterr().err

    def test_gen_data_replay(self, small_data):
        assert main(["replay", "--manifest", "d.sfd.manifest.json"]) == 0


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out
