import dataclasses
import subprocess
import sys

import numpy as np
import pytest

from biomamba import cli
from biomamba.accounting import count_flops, count_params
from biomamba.config import ModelConfig
from biomamba.dataio import read_container
from biomamba.model import build_model

SMALL = """\
# small model for command tests
d_model = 8
n_blocks = 1
d_state = 4
window = 32
hop = 16
learning_rate = 0.003
batch_size = 8
epochs = {epochs}
"""


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "d.bsg"
    assert cli.main(["synth", "--out", str(path), "--subjects", "4", "--trials", "10", "--T", "64",
                     "--C", "2", "--freq-hz", "8", "--fs-hz", "64", "--seed", "1"]) == 0
    return path


def write_config(tmp_path, epochs=30, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL.format(epochs=epochs) + extra)
    return path


class TestSynth:
    def test_defaults(self, tmp_path, capsys):
        out = tmp_path / "s.bsg"
        assert cli.main(["synth", "--out", str(out), "--subjects", "2", "--trials", "5"]) == 0
        ds = read_container(out)
        assert len(ds) == 2 * 5 * 2 and ds.x.shape[1:] == (256, 4)
        assert "20 records" in capsys.readouterr().out

    def test_low_snr(self, tmp_path):
        out = tmp_path / "s.bsg"
        assert cli.main(["synth", "--out", str(out), "--subjects", "2", "--trials", "3", "--snr", "0.1"]) == 0
        assert np.isfinite(read_container(out).x).all()

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.bsg", tmp_path / "b.bsg"
        for p in (a, b):
            cli.main(["synth", "--out", str(p), "--subjects", "2", "--trials", "3", "--seed", "5"])
        assert a.read_bytes() == b.read_bytes()

    def test_env_seed(self, tmp_path, monkeypatch):
        a, b, c = tmp_path / "a.bsg", tmp_path / "b.bsg", tmp_path / "c.bsg"
        cli.main(["synth", "--out", str(a), "--subjects", "2", "--trials", "3", "--seed", "7"])
        monkeypatch.setenv("BIOMAMBA_SEED", "7")
        cli.main(["synth", "--out", str(b), "--subjects", "2", "--trials", "3"])
        monkeypatch.setenv("BIOMAMBA_SEED", "8")
        cli.main(["synth", "--out", str(c), "--subjects", "2", "--trials", "3"])
        assert a.read_bytes() == b.read_bytes() != c.read_bytes()

    def test_nyquist(self, tmp_path, capsys):
        assert cli.main(["synth", "--out", str(tmp_path / "x"), "--freq-hz", "64"]) == cli.EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_unwritable(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path / "no" / "x.bsg"), "--subjects", "1",
                         "--trials", "1"]) == cli.EXIT_DATA


class TestTrainEval:
    def test_memorise_then_eval(self, tmp_path, data, capsys):
        out = tmp_path / "run"
        assert cli.main(["train", "--config", str(write_config(tmp_path)), "--data", str(data),
                         "--out", str(out), "--seed", "0"]) == 0
        for name in ("config.resolved", "model.bmv1", "history.csv", "metrics.csv"):
            assert (out / name).exists()
        assert (out / "history.csv").read_text().startswith("epoch,train_loss,val_accuracy,val_f1,wall_ms\n")
        capsys.readouterr()
        assert cli.main(["eval", "--model", str(out / "model.bmv1"), "--data", str(data), "--split", "train"]) == 0
        text = capsys.readouterr().out
        acc = float(next(line for line in text.splitlines() if line.startswith("accuracy = ")).split("=")[1])
        assert acc > 0.9
        for key in ("macro_precision", "macro_recall", "macro_f1", "auroc", "auprc"):
            assert f"{key} = " in text
        assert "split,n_samples,accuracy" in text

    def test_untrained_is_chance(self, tmp_path, data, capsys):
        out = tmp_path / "run"
        cfg = write_config(tmp_path, epochs=1, extra="learning_rate = 0\n")
        assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
        capsys.readouterr()
        cli.main(["eval", "--model", str(out / "model.bmv1"), "--data", str(data), "--split", "all",
                  "--out", str(tmp_path / "m.csv")])
        row = (tmp_path / "m.csv").read_text().splitlines()[1].split(",")
        assert abs(float(row[2]) - 0.5) <= 0.1

    @pytest.mark.parametrize("ablation,key,value", [("no-pse", "use_pse", "false"), ("no-tde", "use_tde", "false"),
                                                    ("no-bidir", "bidirectional", "false"),
                                                    ("dense-ffn", "sparsity", "0.0")])
    def test_ablation_flags(self, tmp_path, data, ablation, key, value):
        out = tmp_path / "run"
        cfg = write_config(tmp_path, epochs=1)
        assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out),
                         "--ablation", ablation]) == 0
        assert f"{key} = {value}" in (out / "config.resolved").read_text().splitlines()

    def test_same_seed_identical_outputs(self, tmp_path, data):
        cfg = write_config(tmp_path, epochs=2)
        for name in ("a", "b"):
            cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / name), "--seed", "3"])
        for f in ("model.bmv1", "metrics.csv", "config.resolved"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_shape_mismatch_names_both(self, tmp_path, data, capsys):
        cfg = write_config(tmp_path, extra="seq_len = 128\n")
        assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r")]) == 2
        err = capsys.readouterr().err
        assert "(128, 2, 2)" in err and "(64, 2, 2)" in err

    def test_missing_data(self, tmp_path):
        assert cli.main(["train", "--data", str(tmp_path / "nope.bsg"), "--out", str(tmp_path / "r")]) == 3

    def test_unknown_config_key(self, tmp_path, data):
        cfg = write_config(tmp_path, extra="use_psee = false\n")
        assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r")]) == 2

    def test_seed_precedence(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, extra="seed = 5\n")
        assert cli.load_run(cfg).seed == 5
        monkeypatch.setenv("BIOMAMBA_SEED", "6")
        assert cli.load_run(cfg).seed == 6
        assert cli.load_run(cfg, seed=7).seed == 7


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "worst:" in out

    def test_tight_tolerance_fails_naming_op(self, capsys):
        assert cli.main(["gradcheck", "--tolerance", "1e-12", "--module", "ssm"]) == cli.EXIT_CHECK
        cap = capsys.readouterr()
        worst = cap.out.strip().splitlines()[-1]
        assert worst.startswith("worst: ssm/")
        assert worst.split()[1] in cap.err

    def test_module_filter(self, capsys):
        assert cli.main(["gradcheck", "--module", "training"]) == 0
        lines = [line for line in capsys.readouterr().out.splitlines() if not line.startswith("worst")]
        assert lines and all(line.split()[1] == "training" for line in lines)

    def test_unknown_module(self):
        assert cli.main(["gradcheck", "--module", "nope"]) == cli.EXIT_CONFIG


class TestBench:
    def test_csv(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        assert cli.main(["bench", "--lengths", "256,512", "--repeat", "1", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "component,length,median_ms,params,flops"
        assert [line.split(",")[:2] for line in lines[1:]] == [["scan", "256"], ["scan", "512"],
                                                               ["forward", "256"], ["forward", "512"]]
        assert "scaling exponent" in capsys.readouterr().out

    def test_bad_lengths(self):
        assert cli.main(["bench", "--lengths", "512"]) == cli.EXIT_CONFIG
        assert cli.main(["bench", "--lengths", "a,b"]) == cli.EXIT_CONFIG

    def test_flops_double_with_length(self):
        # hop = window / 2 keeps (segments + 1) proportional to T
        small = ModelConfig(seq_len=256, n_channels=4, n_classes=2, d_model=16, n_blocks=1, window=128, hop=64)
        big = dataclasses.replace(small, seq_len=512)
        ratio = count_flops(build_model(big), 1).dense / count_flops(build_model(small), 1).dense
        assert ratio == pytest.approx(2.0, rel=0.05)

    def test_params_grow_only_with_length_tables(self):
        small = ModelConfig(seq_len=256, n_channels=4, n_classes=2, d_model=16, n_blocks=1, window=128, hop=64)
        big = dataclasses.replace(small, seq_len=512)
        grow = count_params(build_model(big)).active - count_params(build_model(small)).active
        assert grow == 256 * 16 + (big.n_segments - small.n_segments) * 16


class TestReport:
    def test_report(self, capsys):
        assert cli.main(["report", "--T", "256", "--C", "14", "--K", "2"]) == 0
        out = capsys.readouterr().out
        assert "params_active = " in out and "flops_total_dense = " in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "biomamba", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "train", "eval", "gradcheck", "bench", "report"):
        assert cmd in res.stdout
