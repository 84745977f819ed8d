import csv
import json

import numpy as np
import pytest
from published_tables import UNDERWATER, UNDERWATER_IDS, reports

from pidr import cli, metrics

TRAIN_FLAGS = ["--hidden-width", "16", "--hidden-layers", "2", "--n-collocation", "40", "--batch-size", "16"]


def _run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    (root / "circle.cfg").write_text("kind = circle\nduration = 10\nimu_rate = 50\n")
    (root / "noise.cfg").write_text("model = xsens\nseed = 3\n")
    assert _run(["synth", "--config", root / "circle.cfg", "--out", root / "clean"]) == 0
    assert _run(["synth", "--config", root / "circle.cfg", "--errors", root / "noise.cfg", "--out", root / "noisy"]) == 0
    return root


def test_synth_row_counts(data):
    assert len((data / "clean" / "imu.csv").read_text().splitlines()) == 1 + 501
    assert len((data / "clean" / "gt.csv").read_text().splitlines()) == 1 + 51
    man = json.loads((data / "clean" / "manifest.json").read_text())
    assert man["command"] == "synth" and man["config"]["kind"] == "circle"


def test_synth_same_seed_identical(data, tmp_path):
    _run(["synth", "--config", data / "circle.cfg", "--errors", data / "noise.cfg", "--out", tmp_path])
    for name in ("imu.csv", "gt.csv", "meta.txt"):
        assert (tmp_path / name).read_bytes() == (data / "noisy" / name).read_bytes()


def test_synth_invalid_kind_names_field(tmp_path, capsys):
    assert _run(["synth", "--kind", "spiral", "--out", tmp_path]) == 2
    assert "kind" in capsys.readouterr().err


def test_synth_unknown_option(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("radiuss = 3\n")
    assert _run(["synth", "--config", tmp_path / "c.cfg", "--out", tmp_path / "o"]) == 2
    assert "radiuss" in capsys.readouterr().err


def test_config_parser(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\n[profile]\na = 1\nb = 2.5  # trailing\nc = yes\nd = 1,2\ne = 'x'\n")
    assert cli.read_config(tmp_path / "c.cfg") == {"a": 1, "b": 2.5, "c": True, "d": (1, 2), "e": "x"}
    (tmp_path / "bad.cfg").write_text("a 1\n")
    with pytest.raises(cli.ConfigError, match="line 1"):
        cli.read_config(tmp_path / "bad.cfg")


def test_missing_config_file_is_io_error(tmp_path):
    assert _run(["synth", "--config", tmp_path / "nope.cfg", "--out", tmp_path]) == 3


def _metrics_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_dr_noise_free_tde(data, tmp_path):
    assert _run(["dr", data / "clean", "--out", tmp_path]) == 0
    (row,) = _metrics_rows(tmp_path / "metrics.csv")
    assert float(row["TDE"]) < 0.01
    assert (tmp_path / "trajectory_clean.csv").exists() and (tmp_path / "track_clean.svg").exists()


def test_dr_noisy_tde_grows_with_duration(tmp_path):
    (tmp_path / "n.cfg").write_text("model = xsens\nseed = 1\n")
    tde = []
    for d in (20, 60):
        _run(["synth", "--kind", "circle", "--duration", d, "--errors", tmp_path / "n.cfg", "--out", tmp_path / f"s{d}"])
        _run(["dr", tmp_path / f"s{d}", "--out", tmp_path / f"o{d}"])
        tde.append(float(_metrics_rows(tmp_path / f"o{d}" / "metrics.csv")[0]["TDE"]))
    assert tde[1] > tde[0]


def test_dr_missing_gt_exit_3(data, tmp_path):
    d = tmp_path / "partial"
    d.mkdir()
    (d / "imu.csv").write_bytes((data / "clean" / "imu.csv").read_bytes())
    (d / "meta.txt").write_bytes((data / "clean" / "meta.txt").read_bytes())
    assert _run(["dr", d, "--out", tmp_path / "o"]) == 3


def test_dr_malformed_input_exit_2(data, tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    for n in ("gt.csv", "meta.txt"):
        (d / n).write_bytes((data / "clean" / n).read_bytes())
    (d / "imu.csv").write_text("t,fx,fy,fz,wx,wy,wz\n0,1,2,3\n")
    assert _run(["dr", d, "--out", tmp_path / "o"]) == 2


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    argv = ["train", data / "noisy", "--out", out, "--max-epochs", 200, *TRAIN_FLAGS]
    assert _run(argv) == 0
    return out


def _log(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def test_train_outputs_and_loss_trend(trained):
    assert (trained / "train_log.csv").read_text().splitlines()[0] == "epoch,total,data,phys,lr"
    log = _log(trained / "train_log.csv")
    assert len(log) == 200 and log[-1, 1] < log[0, 1]
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["max_epochs"] == 200 and cfg["hidden_width"] == 16


def test_train_lambda_phys_zero(data, tmp_path):
    assert _run(["train", data / "noisy", "--out", tmp_path, "--max-epochs", 3, "--lambda-phys", 0, *TRAIN_FLAGS]) == 0
    assert np.all(_log(tmp_path / "train_log.csv")[:, 3] == 0)


def test_train_resume_bit_for_bit(data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _run(["train", data / "noisy", "--out", a, "--max-epochs", 3, *TRAIN_FLAGS])
    _run(["train", data / "noisy", "--out", b, "--max-epochs", 2, *TRAIN_FLAGS])
    _run(["train", data / "noisy", "--out", b, "--max-epochs", 3, "--resume", b / "checkpoint.json", *TRAIN_FLAGS])
    assert (a / "train_log.csv").read_bytes() == (b / "train_log.csv").read_bytes()
    assert (a / "checkpoint.json").read_bytes() == (b / "checkpoint.json").read_bytes()


def test_train_config_file_and_unknown_key(data, tmp_path):
    (tmp_path / "t.cfg").write_text("learning_rate = 2e-3\nmax_epochs = 1\nhidden_width = 8\n")
    assert _run(["train", data / "noisy", "--config", tmp_path / "t.cfg", "--out", tmp_path / "o"]) == 0
    assert json.loads((tmp_path / "o" / "config.json").read_text())["learning_rate"] == 2e-3
    (tmp_path / "u.cfg").write_text("learning_rat = 2e-3\n")
    assert _run(["train", data / "noisy", "--config", tmp_path / "u.cfg", "--out", tmp_path / "p"]) == 2


def test_train_nan_exit_4(data, tmp_path, monkeypatch):
    from pidr import trainer

    def boom(*a, **k):
        raise trainer.NumericalError("non-finite loss at epoch 1")

    monkeypatch.setattr(trainer, "fit", boom)
    assert _run(["train", data / "noisy", "--out", tmp_path, *TRAIN_FLAGS]) == 4


def test_eval_outputs_and_repeatable(data, trained, tmp_path):
    for k in ("a", "b"):
        assert _run(["eval", data / "noisy", "--checkpoint", trained / "checkpoint.json", "--out", tmp_path / k]) == 0
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header.split(",")[1:] == ["PRMSE", "MATE", "TDE", "FDE"]
    for name in ("metrics.csv", "prediction_noisy.csv", "ate_noisy.csv", "track_noisy.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    pred = np.loadtxt(tmp_path / "a" / "prediction_noisy.csv", delimiter=",", skiprows=1)
    assert len(pred) == 501


def test_eval_overfit_run(data, tmp_path):
    argv = ["train", data / "clean", "--out", tmp_path / "t", "--lambda-phys", 0, "--dropout", 0,
            "--max-epochs", 5000, "--epsilon-converge", 1e-3]
    assert _run(argv) == 0
    assert _run(["eval", data / "clean", "--checkpoint", tmp_path / "t" / "checkpoint.json", "--out", tmp_path / "e"]) == 0
    (row,) = _metrics_rows(tmp_path / "e" / "metrics.csv")
    assert float(row["PRMSE"]) < 0.1


def test_eval_shape_mismatch_exit_2(data, trained, tmp_path):
    ck = json.loads((trained / "checkpoint.json").read_text())
    ck["config"]["hidden_width"] = 8
    (tmp_path / "ck.json").write_text(json.dumps(ck))
    assert _run(["eval", data / "noisy", "--checkpoint", tmp_path / "ck.json", "--out", tmp_path / "o"]) == 2


def _write_reports(tmp_path, table, ids):
    paths = []
    for lab, rows in reports(table, ids).items():
        d = tmp_path / lab.replace(" ", "_")
        d.mkdir()
        metrics.write_metrics_csv(d / "metrics.csv", rows)
        paths.append(d / "metrics.csv")
    return paths, list(reports(table, ids))


def test_compare_published_improvements(tmp_path, capsys):
    paths, labels = _write_reports(tmp_path, UNDERWATER, UNDERWATER_IDS)
    assert _run(["compare", *paths, "--labels", *labels, "--out", tmp_path / "c"]) == 0
    text = capsys.readouterr().out
    prmse = [ln for ln in text.splitlines() if ln.startswith("PRMSE")]
    assert [ln.split()[-1] for ln in prmse[:3]] == ["97", "96", "94"]
    assert [ln.split()[2] for ln in prmse] == ["3D", "MoRPI", "MoRPI-PINN", "PiDR"]
    assert (tmp_path / "c" / "comparison.txt").read_text() == text


def test_compare_single_method(tmp_path, capsys):
    paths, _ = _write_reports(tmp_path, UNDERWATER, UNDERWATER_IDS)
    assert _run(["compare", paths[0], "--out", tmp_path / "c"]) == 0
    assert "Improvement" not in capsys.readouterr().out


def test_compare_mismatch_exit_2(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    metrics.write_metrics_csv(a, [metrics.TrajectoryMetrics("x", 1, 1, 1, 1)])
    metrics.write_metrics_csv(b, [metrics.TrajectoryMetrics("y", 1, 1, 1, 1)])
    assert _run(["compare", a, b, "--labels", "a", "b", "--out", tmp_path / "c"]) == 2
    assert _run(["compare", a, b, "--labels", "a", "--out", tmp_path / "c"]) == 2


def test_compare_writes_track_svgs(data, trained, tmp_path):
    _run(["dr", data / "noisy", "--out", tmp_path / "dr"])
    _run(["eval", data / "noisy", "--checkpoint", trained / "checkpoint.json", "--out", tmp_path / "nn"])
    assert _run(["compare", tmp_path / "dr" / "metrics.csv", tmp_path / "nn" / "metrics.csv", "--out", tmp_path / "c"]) == 0
    svg = (tmp_path / "c" / "tracks_noisy.svg").read_text()
    assert svg.count("<polyline") == 3 and ">dr<" in svg and ">nn<" in svg


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--version"])
    assert e.value.code == 0 and "pidr" in capsys.readouterr().out
