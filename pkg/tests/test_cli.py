import json
import subprocess
import sys

import numpy as np
import pytest

from svmpool.cli import DEFAULTS, load_config, run
from svmpool.errors import ConfigError
from svmpool.features import Dataset, FeatureBag, NegativeBag, load_dataset, save_dataset
from svmpool.joint import load_model

FAST_POOL = ["--eta", "0.2", "--normalize", "--threads", "1"]


@pytest.fixture
def synth_file(tmp_path):
    out = tmp_path / "ds.bin"
    argv = ["synth", "--classes", "3", "--bags", "4", "--frames", "20", "--dim", "16", "--rho", "0.2",
            "--separation", "1.5", "--noise", "0.075", "--neg-sigma", "0.25", "--seed", "1", "--out", str(out)]
    assert run(argv) == 0
    return out


def test_synth_writes_dataset_and_sidecar(tmp_path):
    out = tmp_path / "ds.bin"
    mask = tmp_path / "mask.json"
    code = run(["synth", "--classes", "3", "--bags", "20", "--frames", "50", "--dim", "16", "--rho", "0.2",
                "--seed", "1", "--out", str(out), "--mask", str(mask)])
    assert code == 0
    ds = load_dataset(out)
    assert len(ds.bags) == 60 and ds.dim == 16
    side = json.loads((tmp_path / "ds.bin.json").read_text())
    assert side["seed"] == 1 and side["config"]["synth"]["discriminative_fraction"] == 0.2
    assert len(json.loads(mask.read_text())["masks"]) == 60


def test_unknown_flag_is_a_usage_error(tmp_path, capsys):
    assert run(["synth", "--out", str(tmp_path / "x"), "--colour", "red"]) == 1
    assert "usage" in capsys.readouterr().err.lower()
    assert run([]) == 1
    assert run(["frobnicate"]) == 1


def test_help_exits_cleanly(capsys):
    assert run(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_empty_config_gives_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{}")
    cfg = load_config(path)
    assert cfg.pool_config().eta == 0.9
    assert cfg.sections["pool"]["c_target"] == 10.0
    assert cfg.sections == {k: v for k, v in DEFAULTS.items() if isinstance(v, dict)}


@pytest.mark.parametrize("text, fragment", [
    ('{"pool": {"eta": 1.5}}', "eta"),
    ('{"pool": {"etta": 0.5}}', "pool.etta"),
    ('{"colour": 1}', "colour"),
    ('{"pool": 3}', "pool"),
    ('{\n  "pool": {"eta": }\n}', ":2:"),
    ("[]", "object"),
])
def test_invalid_configs(tmp_path, text, fragment):
    path = tmp_path / "c.json"
    path.write_text(text)
    with pytest.raises(ConfigError, match=fragment):
        load_config(path)


def test_config_errors_exit_one(tmp_path, synth_file):
    path = tmp_path / "c.json"
    path.write_text('{"pool": {"eta": 1.5}}')
    assert run(["pool", "--input", str(synth_file), "--out", str(tmp_path / "d.bin"), "--config", str(path)]) == 1


def test_flags_override_config_and_are_echoed(tmp_path, synth_file):
    path = tmp_path / "c.json"
    path.write_text('{"pool": {"eta": 0.9, "normalize": true}}')
    out = tmp_path / "desc.bin"
    assert run(["pool", "--input", str(synth_file), "--out", str(out), "--config", str(path),
                "--eta", "0.5", "--threads", "1"]) == 0
    side = json.loads((tmp_path / "desc.bin.json").read_text())
    assert side["config"]["pool"]["eta"] == 0.5
    assert side["config"]["pool"]["normalize"] is True
    assert all(d["fraction_achieved"] >= 0.5 for d in side["descriptors"])
    assert side["backend"] in ("cython", "python")
    assert load_dataset(out).dim == 17


def test_missing_input_is_a_data_error(tmp_path):
    assert run(["pool", "--input", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "o")]) == 2


def test_corrupt_input_is_a_data_error(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a dataset")
    assert run(["pool", "--input", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_unreachable_eta_lists_every_bag(tmp_path, capsys):
    rng = np.random.default_rng(0)
    bags = [FeatureBag(rng.standard_normal((20, 4)), 1 + i % 2, f"same{i}") for i in range(4)]
    path = tmp_path / "same.bin"
    save_dataset(Dataset(bags, NegativeBag(rng.standard_normal((40, 4)))), path)
    code = run(["pool", "--input", str(path), "--out", str(tmp_path / "o.bin"), "--eta", "0.99",
                "--threads", "1"])
    assert code == 3
    err = capsys.readouterr().err
    assert all(f"bag same{i}: eta unreachable" in err for i in range(4))


def test_fixed_c_and_kernel_pooling(tmp_path, synth_file):
    out = tmp_path / "k.bin"
    assert run(["pool", "--input", str(synth_file), "--out", str(out), "--fixed-c", "--kernel", "chi2",
                "--order", "1", "--threads", "1"]) == 0
    side = json.loads((tmp_path / "k.bin.json").read_text())
    assert {d["c_used"] for d in side["descriptors"]} == {10.0}
    assert load_dataset(out).dim == 16 * 3 + 1


@pytest.mark.parametrize("mode", ["joint", "twostage"])
def test_train_writes_model(tmp_path, synth_file, capsys, mode):
    out = tmp_path / "model.bin"
    assert run(["train", "--input", str(synth_file), "--mode", mode, "--max-outer", "3", "--out", str(out),
                *FAST_POOL]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["config"]["joint"]["mode"] == mode
    descs, bank, meta = load_model(out)
    assert meta == summary and bank.classes == (1, 2, 3)
    assert b"JNTM" in out.read_bytes()
    if mode == "joint":
        trace = summary["objective_trace"]
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_eval_compare_report(tmp_path, synth_file):
    report = tmp_path / "r.json"
    assert run(["eval", "compare", "--input", str(synth_file), "--report", str(report), *FAST_POOL]) == 0
    data = json.loads(report.read_text())
    assert data["schema"] == 1 and data["name"] == "compare"
    assert data["config"]["cli"]["pool"]["eta"] == 0.2
    assert set(data["metrics"]) == {"average", "max", "svmp"}


def test_eval_sweep_timing_and_enumgap(tmp_path, synth_file, capsys):
    assert run(["eval", "sweep", "--input", str(synth_file), "--parameter", "c", "--grid", "0.1,10",
                *FAST_POOL]) == 0
    assert len(json.loads(capsys.readouterr().out)["metrics"]["series"]) == 2
    assert run(["eval", "timing", "--counts", "20,40", "--timing-dim", "64", *FAST_POOL]) == 0
    assert set(json.loads(capsys.readouterr().out)["timing_ms"]["per_descriptor_ms"]) == {"20", "40"}
    assert run(["eval", "sweep", "--input", str(synth_file), "--parameter", "c"]) == 1
    assert run(["eval", "enumgap", "--input", str(synth_file), *FAST_POOL]) == 1  # 20 frames > 12


def test_gradcheck_json(capsys):
    assert run(["gradcheck", "--n", "6", "--p", "3", "--lambda", "2", "--trials", "5", "--seed", "1"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["max_rel_error"] <= 1e-4 and rep["config"]["gradcheck"]["trials"] == 5


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "svmpool.cli", "gradcheck", "--trials", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["name"] == "gradcheck"
