import hashlib
import struct

import numpy as np
import pytest

from biomamba.dataio import (MAGIC, BiosignalDataset, SplitSpec, decode, encode, import_csv, read_container,
                             subject_split, synth_spectral, write_container)
from biomamba.errors import ConfigError, ContainerError, DataError


def toy_dataset(n=3, t=5, c=2, k=2, seed=0):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, t, c)).astype(np.float32).astype(np.float64)
    return BiosignalDataset(x, r.integers(0, k, n), np.arange(n) % 4, k, fs_hz=250.0)


class TestContainer:
    def test_round_trip_byte_identical(self, tmp_path):
        ds = toy_dataset()
        write_container(tmp_path / "a.bsg", ds)
        back = read_container(tmp_path / "a.bsg")
        write_container(tmp_path / "b.bsg", back)
        assert (tmp_path / "a.bsg").read_bytes() == (tmp_path / "b.bsg").read_bytes()
        np.testing.assert_array_equal(back.x, ds.x)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.subjects, ds.subjects)
        assert back.fs_hz == 250.0 and back.n_classes == 2

    def test_layout(self):
        ds = toy_dataset(n=2, t=3, c=1)
        buf = encode(ds)
        assert buf[:4] == MAGIC
        assert struct.unpack_from("<5I", buf, 4) == (2, 3, 1, 2, 250_000)
        assert len(buf) == 24 + 2 * (4 + 3 * 4)
        subject, label = struct.unpack_from("<HH", buf, 24)
        assert (subject, label) == (ds.subjects[0], ds.labels[0])
        assert struct.unpack_from("<f", buf, 28)[0] == np.float32(ds.x[0, 0, 0])

    def test_float32_storage(self):
        ds = BiosignalDataset(np.full((1, 1, 1), 0.1), [0], [0], 2)
        assert decode(encode(ds)).x[0, 0, 0] == np.float64(np.float32(0.1))

    def test_truncation_reports_offset(self):
        buf = encode(toy_dataset(n=3, t=5, c=2))
        record = 4 + 5 * 2 * 4
        with pytest.raises(ContainerError, match="offset") as err:
            decode(buf[:24 + record + 7])
        assert err.value.offset == 24 + record

    def test_truncated_header(self):
        with pytest.raises(ContainerError) as err:
            decode(MAGIC + b"\x00" * 6)
        assert err.value.offset == 10

    def test_bad_magic(self):
        buf = bytearray(encode(toy_dataset()))
        buf[:4] = b"XXXX"
        with pytest.raises(ContainerError) as err:
            decode(bytes(buf))
        assert err.value.offset == 0

    def test_trailing_bytes(self):
        buf = encode(toy_dataset())
        with pytest.raises(ContainerError) as err:
            decode(buf + b"\x00")
        assert err.value.offset == len(buf)

    def test_degenerate_shape(self):
        with pytest.raises(ContainerError):
            decode(struct.pack("<4s5I", MAGIC, 0, 0, 1, 2, 1000))

    def test_label_out_of_range(self):
        buf = bytearray(encode(toy_dataset(n=2, k=2)))
        struct.pack_into("<H", buf, 24 + (4 + 40) + 2, 7)
        with pytest.raises(ContainerError, match="record 1"):
            decode(bytes(buf))

    def test_ten_thousand_checksums(self, tmp_path):
        ds = toy_dataset(n=10_000, t=16, c=3, k=5, seed=1)
        sums = [hashlib.sha256(r.tobytes()).hexdigest() for r in ds.x]
        write_container(tmp_path / "big.bsg", ds)
        back = read_container(tmp_path / "big.bsg")
        assert [hashlib.sha256(r.tobytes()).hexdigest() for r in back.x] == sums
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_container(tmp_path / "nope.bsg")

    def test_no_temp_files_left(self, tmp_path):
        write_container(tmp_path / "a.bsg", toy_dataset())
        assert [p.name for p in tmp_path.iterdir()] == ["a.bsg"]

    def test_dataset_validation(self):
        with pytest.raises(DataError, match="record 1"):
            BiosignalDataset(np.zeros((2, 3, 1)), [0, 2], [0, 0], 2)
        with pytest.raises(DataError):
            BiosignalDataset(np.zeros((2, 3)), [0, 1], [0, 0], 2)


def by_subject(n_subjects, per=2):
    subjects = np.repeat(np.arange(n_subjects) + 10, per)
    return BiosignalDataset(np.zeros((len(subjects), 4, 1)), np.arange(len(subjects)) % 2, subjects, 2)


class TestSplit:
    def test_five_subjects(self):
        s = subject_split(by_subject(5), SplitSpec(0.2, 0.2, seed=0))
        assert (len(s.train_subjects), len(s.val_subjects), len(s.test_subjects)) == (3, 1, 1)

    def test_remainder_to_train(self):
        s = subject_split(by_subject(8), SplitSpec(0.2, 0.2, seed=0))
        assert (len(s.train_subjects), len(s.val_subjects), len(s.test_subjects)) == (6, 1, 1)

    @pytest.mark.parametrize("seed", range(10))
    def test_disjoint_and_complete(self, seed):
        ds = by_subject(9, per=3)
        s = subject_split(ds, SplitSpec(0.25, 0.25, seed=seed))
        sets = [set(p.subjects.tolist()) for p in (s.train, s.val, s.test)]
        assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
        assert len(s.train) + len(s.val) + len(s.test) == len(ds)
        assert sets[0] == set(s.train_subjects)

    def test_deterministic(self):
        ds = by_subject(10)
        a = subject_split(ds, SplitSpec(seed=3))
        b = subject_split(ds, SplitSpec(seed=3))
        assert (a.train_subjects, a.val_subjects, a.test_subjects) == (b.train_subjects, b.val_subjects, b.test_subjects)

    def test_explicit_lists(self):
        ds = by_subject(8)
        s = subject_split(ds, SplitSpec(val_subjects=[15, 16], test_subjects=[12, 17]))
        assert s.val_subjects == [15, 16] and s.test_subjects == [12, 17]
        assert s.train_subjects == [10, 11, 13, 14]

    def test_explicit_overlap(self):
        with pytest.raises(ConfigError, match="both"):
            subject_split(by_subject(8), SplitSpec(val_subjects=[15, 16], test_subjects=[16]))

    def test_explicit_unknown_subject(self):
        with pytest.raises(ConfigError):
            subject_split(by_subject(4), SplitSpec(val_subjects=[99]))

    def test_too_few_subjects(self):
        with pytest.raises(ConfigError):
            subject_split(by_subject(2), SplitSpec())


class TestSynth:
    def test_noise_free_peak_bin(self):
        ds = synth_spectral(n_subjects=1, trials_per_subject=4, seq_len=256, n_channels=2, snr=np.inf, seed=1)
        for x in ds.x[ds.labels == 1]:
            mags = np.abs(np.fft.rfft(x[:128, 0]))
            assert mags.argmax() == round(10 * 128 / 128)

    def test_balance_per_subject(self):
        ds = synth_spectral(n_subjects=3, trials_per_subject=7, seq_len=32, n_channels=1)
        for s in ds.subject_ids():
            assert np.bincount(ds.labels[ds.subjects == s]).tolist() == [7, 7]

    def test_shapes_and_determinism(self):
        a = synth_spectral(n_subjects=2, trials_per_subject=3, seq_len=64, n_channels=3, seed=9)
        b = synth_spectral(n_subjects=2, trials_per_subject=3, seq_len=64, n_channels=3, seed=9)
        assert a.x.shape == (12, 64, 3)
        assert encode(a) == encode(b)

    def test_matched_power(self):
        ds = synth_spectral(n_subjects=4, trials_per_subject=200, seq_len=256, n_channels=2, seed=2)
        p0 = np.mean(ds.x[ds.labels == 0] ** 2)
        p1 = np.mean(ds.x[ds.labels == 1] ** 2)
        assert p0 == pytest.approx(p1, rel=0.02)

    def test_peak_bin_threshold_classifier(self):
        ds = synth_spectral(seed=0)
        feature = np.abs(np.fft.rfft(ds.x, axis=1))[:, round(10 * 256 / 128), :].mean(axis=1)
        best = max(np.mean((feature > t) == (ds.labels == 1)) for t in np.unique(feature))
        assert best > 0.99

    def test_time_mean_indistinguishable(self):
        ds = synth_spectral(seed=0)
        x0, x1 = ds.x[ds.labels == 0], ds.x[ds.labels == 1]
        n = len(x0)
        sigma = ds.x.std()
        inside = np.abs(x1.mean(axis=0) - x0.mean(axis=0)) < 3 * sigma / np.sqrt(n)
        # the difference of two means has sd sqrt(2) sigma / sqrt(n), so ~3.4% of cells exceed the bound by chance
        assert inside.mean() > 0.9

    @pytest.mark.parametrize("freq", [64.0, 100.0, 0.0])
    def test_above_nyquist(self, freq):
        with pytest.raises(ConfigError):
            synth_spectral(f_signal_hz=freq, fs_hz=128.0)


class TestImportCsv:
    def test_import(self, tmp_path):
        r = np.random.default_rng(0)
        rows = ["file,label,subject"]
        arrays = []
        for i in range(4):
            arr = r.standard_normal((6, 2))
            arrays.append(arr)
            header = "ch0,ch1\n" if i % 2 else ""
            (tmp_path / f"r{i}.csv").write_text(header + "\n".join(",".join(repr(float(v)) for v in row) for row in arr))
            rows.append(f"r{i}.csv,{i % 2},{i // 2}")
        (tmp_path / "index.csv").write_text("\n".join(rows) + "\n")
        ds = import_csv(tmp_path / "index.csv", fs_hz=100.0)
        np.testing.assert_array_equal(ds.x, np.stack(arrays))
        assert ds.labels.tolist() == [0, 1, 0, 1] and ds.subjects.tolist() == [0, 0, 1, 1]
        assert ds.n_classes == 2

    def test_shape_mismatch(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,2\n3,4\n")
        (tmp_path / "b.csv").write_text("1,2\n")
        (tmp_path / "index.csv").write_text("file,label,subject\na.csv,0,0\nb.csv,1,0\n")
        with pytest.raises(DataError, match="record 1"):
            import_csv(tmp_path / "index.csv")

    def test_missing_columns(self, tmp_path):
        (tmp_path / "index.csv").write_text("path,label\nx.csv,0\n")
        with pytest.raises(DataError):
            import_csv(tmp_path / "index.csv")
