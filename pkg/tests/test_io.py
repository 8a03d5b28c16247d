import math

import numpy as np
import pytest

from ris_amc import io, reports
from ris_amc.cnn import Architecture, EpochRecord, build_model
from ris_amc.errors import FormatError, ManifestMismatch, TruncatedRecord
from ris_amc.impairments import DatasetSpec, ImpairmentProfile, generate_dataset
from ris_amc.metrics import ConfusionMatrix
from ris_amc.sigsynth import FRAME_LENGTH


@pytest.fixture(scope="module")
def ds100():
    return generate_dataset(DatasetSpec(frames_per_class=20, master_seed=8))


class TestDatasetContainer:
    def test_round_trip_bit_exact(self, tmp_path, ds100):
        path = tmp_path / "d.bin"
        io.write_dataset(path, ds100)
        back = io.read_dataset(path)
        assert back.samples.tobytes() == ds100.samples.tobytes()
        np.testing.assert_array_equal(back.labels, ds100.labels)
        np.testing.assert_array_equal(back.seeds, ds100.seeds)
        np.testing.assert_array_equal(back.partition, ds100.partition)
        assert back.spec == ds100.spec

    def test_file_size(self, tmp_path, ds100):
        path = tmp_path / "d.bin"
        io.write_dataset(path, ds100)
        assert path.stat().st_size == 100 * FRAME_LENGTH * 8 + 24 == io.dataset_file_size(100)

    def test_full_size_arithmetic(self):
        assert io.dataset_file_size(25000) == 25000 * 2048 * 8 + 24

    def test_little_endian_interleaved(self, tmp_path, ds100):
        path = tmp_path / "d.bin"
        io.write_dataset(path, ds100)
        raw = path.read_bytes()
        first = np.frombuffer(raw, dtype="<f4", count=4, offset=24)
        x = ds100.samples[0]
        np.testing.assert_array_equal(first, [x[0].real, x[0].imag, x[1].real, x[1].imag])

    def test_truncated(self, tmp_path, ds100):
        path = tmp_path / "d.bin"
        io.write_dataset(path, ds100)
        raw = path.read_bytes()
        path.write_bytes(raw[: 24 + 37 * FRAME_LENGTH * 8 + 100])
        with pytest.raises(TruncatedRecord) as exc:
            io.read_dataset(path)
        assert exc.value.record_index == 37

    def test_bad_magic(self, tmp_path, ds100):
        path = tmp_path / "d.bin"
        io.write_dataset(path, ds100)
        raw = bytearray(path.read_bytes())
        raw[:8] = b"NOTADATA"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            io.read_dataset(path)

    def test_manifest_count_mismatch(self, tmp_path, ds100):
        path = tmp_path / "d.bin"
        man = io.write_dataset(path, ds100)
        text = man.read_text().replace("count=100", "count=99")
        man.write_text(text)
        with pytest.raises(ManifestMismatch):
            io.read_dataset(path)

    def test_manifest_contents(self, tmp_path, ds100):
        man = io.read_manifest(io.write_dataset(tmp_path / "d.bin", ds100))
        assert man["classes"] == "BPSK,QPSK,8PSK,16QAM,64QAM"
        assert man["class_counts"] == "20,20,20,20,20"
        assert len(man["seeds"].split(",")) == 100

    def test_rewrite_is_byte_identical(self, tmp_path):
        spec = DatasetSpec(frames_per_class=10, master_seed=3)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        io.write_dataset(a, generate_dataset(spec))
        io.write_dataset(b, generate_dataset(spec))
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.bin.manifest").read_bytes() == (tmp_path / "b.bin.manifest").read_bytes()

    def test_infinite_snr_profile(self, tmp_path):
        spec = DatasetSpec(frames_per_class=10, profile=ImpairmentProfile(snr_db=math.inf))
        io.write_dataset(tmp_path / "d.bin", generate_dataset(spec))
        assert io.read_dataset(tmp_path / "d.bin").spec.profile.snr_db == math.inf


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = build_model(Architecture(), seed=4)
        m.buffers["bn2.running_var"][:] = np.linspace(0.5, 2, 32)
        m.history.append(EpochRecord(1, 78, 0.02, 1.5, 0.4, 1.2, 0.5))
        io.write_checkpoint(tmp_path / "c.bin", m, {"seed": 4})
        back, meta = io.read_checkpoint(tmp_path / "c.bin")
        assert meta == {"seed": 4}
        assert back.arch == m.arch and back.history == m.history
        for k in m.params:
            assert back.params[k].tobytes() == m.params[k].tobytes()
        for k in m.buffers:
            assert back.buffers[k].tobytes() == m.buffers[k].tobytes()

    def test_truncated_and_magic(self, tmp_path):
        io.write_checkpoint(tmp_path / "c.bin", build_model(Architecture(filters=(4,), kernels=(3,))))
        raw = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-10])
        with pytest.raises(FormatError):
            io.read_checkpoint(tmp_path / "t.bin")
        (tmp_path / "m.bin").write_bytes(b"X" + raw[1:])
        with pytest.raises(FormatError):
            io.read_checkpoint(tmp_path / "m.bin")


class TestScenario:
    def test_defaults(self, tmp_path):
        p = tmp_path / "s.ini"
        p.write_text("[run]\nseed = 5\n")
        sc = io.load_scenario(p)
        assert sc.seed == 5 and sc.dataset.master_seed == 5 and sc.training.shuffle_seed == 5
        assert sc.dataset.frames_per_class == 5000 and sc.geometry.rx_gain_db == (45.0, 62.0)

    def test_sections(self, tmp_path):
        p = tmp_path / "s.ini"
        p.write_text("[dataset]\nframes_per_class = 10\n[impairments]\nsnr_db = 0\n"
                     "[geometry]\nd2 = 4.5\nrx_gain_db = 40, 50\n[architecture]\nfilters = 8, 8\nkernels = 3, 3\n"
                     "[optimizer]\ntargets = user1, joint-min\n")
        sc = io.load_scenario(p)
        assert sc.dataset.frames_per_class == 10 and sc.dataset.profile.snr_db == 0.0
        assert sc.geometry.d2 == 4.5 and sc.geometry.rx_gain_db == (40.0, 50.0)
        assert sc.architecture.filters == (8, 8)
        assert sc.optimizer.targets == ("user1", "joint-min")

    @pytest.mark.parametrize("text", ["[bogus]\na = 1\n", "[geometry]\nnope = 1\n", "[geometry]\nd0 = -1\n",
                                      "[dataset]\nsplit = 0.5, 0.5, 0.5\n"])
    def test_invalid(self, tmp_path, text):
        p = tmp_path / "s.ini"
        p.write_text(text)
        with pytest.raises((FormatError, ValueError)):
            io.load_scenario(p)

    def test_hash_tracks_content(self):
        assert io.Scenario().sha256() == io.Scenario().sha256()
        assert io.Scenario().sha256() != io.Scenario(seed=1).sha256()


class TestReports:
    def test_table_round_trip(self, tmp_path):
        reports.write_table(tmp_path / "t.tsv", "demo", ["a", "b"], [[1, 0.5], [2, 0.25]], {"seed": 3})
        meta, cols, rows = reports.read_table(tmp_path / "t.tsv")
        assert meta == {"seed": "3"} and cols == ["a", "b"] and rows == [["1", "0.5"], ["2", "0.25"]]
        assert (tmp_path / "t.tsv").read_text().startswith("# ris-amc demo v1\n")

    def test_confusion_report(self, tmp_path):
        cm = ConfusionMatrix.from_labels([0, 1, 1, 3], [0, 1, 2, 3])
        reports.write_confusion(tmp_path / "c.tsv", cm, "user1 test", {"seed": 0})
        meta, cols, rows = reports.read_table(tmp_path / "c.tsv")
        assert meta["matrix"] == "user1 test" and float(meta["accuracy"]) == 0.75
        assert cols == ["table", "truth", "BPSK", "QPSK", "8PSK", "16QAM", "64QAM"]
        assert rows[1] == ["counts", "QPSK", "0", "1", "1", "0", "0"]
        assert rows[6] == ["percent", "QPSK", "0.0", "50.0", "50.0", "0.0", "0.0"]


class TestSpectrogram:
    def test_grid_dimensions(self):
        _, _, grid = reports.spectrogram(np.ones(2048, complex))
        assert grid.shape == ((2048 - 128) // 64 + 1, 128)
        assert grid.max() == 1.0

    def test_tone_at_eighth_of_fs(self):
        fs = 200e3
        n = np.arange(2048)
        f, _, grid = reports.spectrogram(np.exp(2j * np.pi * fs / 8 * n / fs), fs)
        col = np.argmax(grid.mean(axis=0))
        assert f[col] == pytest.approx(fs / 8)
        # every time slice peaks in that same bin
        assert np.all(np.argmax(grid, axis=1) == col)

    def test_bpsk_band_energy(self):
        from ris_amc.sigsynth import ModulationScheme, synthesize_frame
        fr = synthesize_frame(ModulationScheme.BPSK, seed=3)
        f, _, grid = reports.spectrogram(fr.samples)
        power = (grid**2).sum(axis=0)
        band = np.abs(f) <= (1 + 0.35) * 25e3 / 2 + 200e3 / 128
        assert power[band].sum() / power.sum() > 0.99

    def test_written_grid(self, tmp_path):
        grid = reports.write_spectrogram(tmp_path / "s.tsv", np.ones(2048, complex), meta={"label": "x"})
        meta, cols, rows = reports.read_table(tmp_path / "s.tsv")
        assert len(rows) == 31 and len(cols) == 129 and meta["window"] == "128"
        np.testing.assert_array_equal(np.array(rows, float)[:, 1:], grid)
