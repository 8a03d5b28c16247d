import time

import numpy as np
import pytest

from ris_amc import io, reports
from ris_amc.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main

TINY = """[run]
seed = 4
[dataset]
frames_per_class = 10
[architecture]
filters = 4, 4
kernels = 3, 3
[training]
batch_size = 8
max_epochs = 2
[geometry]
rows = 2
cols = 3
[optimizer]
budget = 8
max_sweeps = 1
eval_frames_per_class = 2
report_frames_per_class = 2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.ini").write_text(TINY)
    assert main(["gen", "--scenario", str(d / "tiny.ini"), "--out", str(d / "data")]) == EXIT_OK
    assert main(["train", "--scenario", str(d / "tiny.ini"), "--data", str(d / "data/dataset.bin"),
                 "--out", str(d / "model")]) == EXIT_OK
    return d


class TestGen:
    def test_smoke_is_fast_and_reproducible(self, tmp_path):
        t0 = time.perf_counter()
        assert main(["gen", "--frames-per-class", "10", "--seed", "1", "--out", str(tmp_path / "a")]) == EXIT_OK
        assert time.perf_counter() - t0 < 5.0
        assert main(["gen", "--frames-per-class", "10", "--seed", "1", "--out", str(tmp_path / "b")]) == EXIT_OK
        for name in ("dataset.bin", "dataset.bin.manifest"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        man = io.read_manifest(tmp_path / "a/dataset.bin.manifest")
        assert man["class_counts"] == "10,10,10,10,10" and man["master_seed"] == "1"
        assert len(man["spec_sha256"]) == 64

    def test_seed_changes_data(self, tmp_path):
        main(["gen", "--frames-per-class", "10", "--seed", "1", "--out", str(tmp_path / "a")])
        main(["gen", "--frames-per-class", "10", "--seed", "2", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a/dataset.bin").read_bytes() != (tmp_path / "b/dataset.bin").read_bytes()


class TestTrainEvaluate:
    def test_history(self, workdir):
        meta, cols, rows = reports.read_table(workdir / "model/history.tsv")
        assert cols == ["epoch", "iterations", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]
        assert [r[0] for r in rows] == ["1", "2"] and rows[0][1] == "5"
        assert meta["seed"] == "4" and len(meta["config_sha256"]) == 64

    def test_checkpoint_loads(self, workdir):
        model, meta = io.read_checkpoint(workdir / "model/checkpoint.bin")
        assert model.arch.filters == (4, 4) and meta["seed"] == 4

    def test_evaluate_partition(self, workdir, capsys):
        out = workdir / "eval"
        assert main(["evaluate", "--scenario", str(workdir / "tiny.ini"), "--checkpoint",
                     str(workdir / "model/checkpoint.bin"), "--data", str(workdir / "data/dataset.bin"),
                     "--snr", "0", "--out", str(out)]) == EXIT_OK
        meta, _, rows = reports.read_table(out / "confusion_test.tsv")
        assert "snr_db=0.0" in meta["matrix"]
        assert sum(int(v) for r in rows[:5] for v in r[2:]) == 5

    def test_evaluate_channel_configs(self, workdir):
        out = workdir / "eval_ch"
        assert main(["evaluate", "--scenario", str(workdir / "tiny.ini"), "--checkpoint",
                     str(workdir / "model/checkpoint.bin"), "--config", "optimal", "--config", "random",
                     "--config", "a2b", "--out", str(out)]) == EXIT_OK
        names = sorted(p.name for p in out.glob("confusion_*.tsv"))
        assert names == sorted(f"confusion_{u}_{c}.tsv" for u in ("user1", "user2")
                               for c in ("optimal-user1", "optimal-user2", "random", "a2b"))

    def test_noise_floor_override(self, workdir):
        snrs = []
        for floor in ("-90", "-60"):
            out = workdir / f"eval_nf{floor}"
            assert main(["evaluate", "--scenario", str(workdir / "tiny.ini"), "--checkpoint",
                         str(workdir / "model/checkpoint.bin"), "--config", "random",
                         "--noise-floor-dbm", floor, "--out", str(out)]) == EXIT_OK
            meta, _, _ = reports.read_table(out / "confusion_user1_random.tsv")
            snrs.append(float(meta["matrix"].rsplit("snr_db=", 1)[1]))
        assert snrs[0] - snrs[1] == pytest.approx(30.0, abs=1e-3)

    def test_architecture_mismatch(self, workdir):
        assert main(["evaluate", "--checkpoint", str(workdir / "model/checkpoint.bin"),
                     "--out", str(workdir / "x")]) == EXIT_DATA

    def test_rerun_is_byte_identical(self, workdir, tmp_path):
        assert main(["train", "--scenario", str(workdir / "tiny.ini"), "--data",
                     str(workdir / "data/dataset.bin"), "--out", str(tmp_path)]) == EXIT_OK
        for name in ("checkpoint.bin", "history.tsv"):
            assert (tmp_path / name).read_bytes() == (workdir / "model" / name).read_bytes()

    def test_non_finite_loss_exit(self, workdir, tmp_path):
        (tmp_path / "hot.ini").write_text(TINY.replace("max_epochs = 2", "max_epochs = 1\ninitial_lr = 1e30"))
        assert main(["train", "--scenario", str(tmp_path / "hot.ini"), "--data",
                     str(workdir / "data/dataset.bin"), "--out", str(tmp_path / "m")]) == EXIT_NUMERIC


class TestOptimize:
    def test_outputs(self, workdir):
        out = workdir / "opt"
        args = ["optimize", "--scenario", str(workdir / "tiny.ini"), "--checkpoint",
                str(workdir / "model/checkpoint.bin"), "--target", "user1", "--target", "joint-min",
                "--calibrate", "--out", str(out)]
        assert main(args) == EXIT_OK
        meta, cols, rows = reports.read_table(out / "trace_user1.tsv")
        assert cols == ["iteration", "config_hex", "acc_user1", "acc_user2", "value", "best_so_far"]
        assert len(rows) == 8 and all(len(r[1]) == 3 for r in rows)
        bsf = np.array([float(r[5]) for r in rows])
        assert np.all(np.diff(bsf) >= 0)
        _, _, pairs = reports.read_table(out / "pairs.tsv")
        assert 1 <= len(pairs) <= 8
        assert (out / "calibration.tsv").exists()
        assert "joint-min" in (out / "best_configs.tsv").read_text()
        first = {p.name: p.read_bytes() for p in out.glob("*.tsv")}
        assert main(args) == EXIT_OK
        assert first == {p.name: p.read_bytes() for p in out.glob("*.tsv")}


class TestSpectrogramAndErrors:
    def test_spectrogram(self, workdir):
        out = workdir / "spec/s.tsv"
        assert main(["spectrogram", "--data", str(workdir / "data/dataset.bin"), "--index", "3",
                     "--out", str(out)]) == EXIT_OK
        meta, cols, rows = reports.read_table(out)
        assert len(rows) == 31 and len(cols) == 129 and meta["label"] == "BPSK"

    def test_usage_errors(self, workdir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["bogus"])
        assert exc.value.code == EXIT_USAGE
        assert main(["train", "--data", str(tmp_path / "missing.bin"), "--out", str(tmp_path)]) == EXIT_USAGE
        assert main(["spectrogram", "--data", str(workdir / "data/dataset.bin"), "--index", "999",
                     "--out", str(tmp_path / "s.tsv")]) == EXIT_USAGE

    def test_data_errors(self, tmp_path):
        (tmp_path / "junk.bin").write_bytes(b"garbage" * 10)
        assert main(["spectrogram", "--data", str(tmp_path / "junk.bin"), "--out", str(tmp_path / "s")]) == EXIT_DATA
        (tmp_path / "bad.ini").write_text("[nope]\nx = 1\n")
        assert main(["gen", "--scenario", str(tmp_path / "bad.ini"), "--out", str(tmp_path)]) == EXIT_DATA
