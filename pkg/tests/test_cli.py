import numpy as np
import pytest

from ukt.cli import main
from ukt.config import RunConfig, load_config
from ukt.data import parse_interaction_log
from ukt.synth import SynthSpec, generate_students
from ukt.data import write_csv_flat


@pytest.fixture
def cohort_csv(tmp_path):
    bundle = generate_students(
        SynthSpec(num_students=12, num_kcs=6, seq_len=(5, 12),
                  ability_std=4.0, seed=3)
    )
    path = tmp_path / "cohort.csv"
    write_csv_flat(bundle, path)
    return path


TINY = [
    "--epochs", "2", "--dim", "4", "--heads", "2", "--batch-size", "8",
    "--dropout", "0.0",
]


def _tiny_config(tmp_path, dataset):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f"""
[data]
dataset = "{dataset}"
format = "csv-flat"
test_fraction = 0.25
folds_k = 3

[train]
max_epochs = 2
dim = 4
heads = 2
batch_size = 8
dropout = 0.0
max_len = 16

[run]
lambda_grid = [0.0, 0.1]
""",
        encoding="utf-8",
    )
    return cfg


def test_synth_writes_cohort(tmp_path):
    out = tmp_path / "out"
    code = main(["synth", "--out", str(out), "--seed", "5", "--quiet"])
    assert code == 0
    bundle = parse_interaction_log(out / "cohort.csv", "csv-flat")
    assert bundle.num_interactions > 0
    assert (out / "config.toml").exists()


def test_prepare_data(tmp_path, cohort_csv):
    out = tmp_path / "out"
    code = main(["prepare-data", "--dataset", str(cohort_csv),
                 "--out", str(out), "--quiet"])
    assert code == 0
    prepared = parse_interaction_log(out / "prepared.csv", "csv-flat")
    assert all(len(s) >= 3 for s in prepared.sequences)


def test_train_eval_heatmap_pipeline(tmp_path, cohort_csv):
    out = tmp_path / "run"
    cfg = _tiny_config(tmp_path, cohort_csv)
    code = main(["train", "--config", str(cfg), "--out", str(out), "--quiet"])
    assert code == 0
    for name in ("config.toml", "metrics.csv", "model.ckpt", "eval.csv"):
        assert (out / name).exists(), name

    out_eval = tmp_path / "eval"
    code = main(["eval", "--config", str(cfg), "--out", str(out_eval),
                 "--checkpoint", str(out / "model.ckpt"), "--quiet"])
    assert code == 0
    lines = (out_eval / "eval.csv").read_text().splitlines()
    assert lines[0] == "split,auc,accuracy"

    out_heat = tmp_path / "heat"
    code = main(["heatmap", "--config", str(cfg), "--out", str(out_heat),
                 "--checkpoint", str(out / "model.ckpt"), "--quiet"])
    assert code == 0
    heat = (out_heat / "covariance_heatmap.csv").read_text().splitlines()
    assert heat[0].startswith("sequence_id,dim0")


def test_train_is_idempotent(tmp_path, cohort_csv):
    cfg = _tiny_config(tmp_path, cohort_csv)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg), "--out", str(out_a), "--quiet"]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(out_b), "--quiet"]) == 0
    for name in ("model.ckpt", "metrics.csv", "eval.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_config_echo_roundtrip(tmp_path, cohort_csv):
    cfg = _tiny_config(tmp_path, cohort_csv)
    out_a = tmp_path / "a"
    assert main(["train", "--config", str(cfg), "--out", str(out_a),
                 "--seed", "9", "--quiet"]) == 0
    echoed = load_config(out_a / "config.toml")
    assert echoed.train.seed == 9
    out_b = tmp_path / "b"
    assert main(["train", "--config", str(out_a / "config.toml"),
                 "--out", str(out_b), "--quiet"]) == 0
    assert (out_a / "model.ckpt").read_bytes() == (out_b / "model.ckpt").read_bytes()


def test_sweep_lambda(tmp_path, cohort_csv):
    cfg = _tiny_config(tmp_path, cohort_csv)
    out = tmp_path / "sweep"
    code = main(["sweep-lambda", "--config", str(cfg), "--out", str(out), "--quiet"])
    assert code == 0
    lines = (out / "lambda_sweep.csv").read_text().splitlines()
    assert lines[0] == "lambda,mean_auc,std_auc"
    assert len(lines) == 3  # header + two grid entries


def test_stress_eval(tmp_path, cohort_csv):
    cfg = _tiny_config(tmp_path, cohort_csv)
    out = tmp_path / "stress"
    code = main(["stress-eval", "--config", str(cfg), "--out", str(out),
                 "--noise-rate", "0.3", "--quiet"])
    assert code == 0
    lines = (out / "stress_eval.csv").read_text().splitlines()
    assert lines[0] == "variant,auc_clean,auc_noised,degradation"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["ukt", "no_cl"]


def test_ablate(tmp_path, cohort_csv):
    cfg = _tiny_config(tmp_path, cohort_csv)
    out = tmp_path / "ablate"
    code = main(["ablate", "--config", str(cfg), "--out", str(out), "--quiet"])
    assert code == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert [ln.split(",")[0] for ln in lines] == [
        "variant", "ukt", "no_cl", "no_wdist", "no_stocemb"
    ]


def test_gradcheck_passes(tmp_path, capsys):
    out = tmp_path / "gc"
    code = main(["gradcheck", "--seed", "7", "--out", str(out), "--quiet"])
    captured = capsys.readouterr()
    assert code == 0
    assert "max relative error" in captured.out
    assert (out / "gradcheck.csv").exists()


def test_missing_config_exits_1(tmp_path):
    code = main(["train", "--config", str(tmp_path / "missing.toml"), "--quiet"])
    assert code == 1


def test_unknown_flag_exits_1():
    assert main(["train", "--bogus-flag", "1"]) == 1


def test_missing_dataset_exits_2(tmp_path):
    code = main(["train", "--dataset", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 2


def test_no_dataset_exits_1(tmp_path):
    code = main(["train", "--out", str(tmp_path / "o"), "--quiet"])
    assert code == 1
