import importlib.util
import json
from pathlib import Path

import pandas as pd
import pytest
import yaml

import run_experiment
from src.Harness.Experiment_Config import parse_config
from src.Harness.Experiment_Runner import run_experiment as run_pipeline

ROOT = Path(__file__).resolve().parents[1]

SMALL = {
    "experiment": {"name": "smoke", "seed": 1, "progress": False},
    "data": {"source": "blobs", "blobs": {"n_classes": 2, "per_class": 16, "test_per_class": 6, "texture_amplitude": 0.02}},
    "nn": {"architecture": "mlp", "hidden": [8], "batchnorm": False, "lr": 0.05, "epochs": 2, "batch_size": 16},
    "attack": {"iters": 1, "cw_iters": 2, "cw_c_steps": 2, "df_max_iters": 5},
    "augment": {"crop_size": 8, "crop_padding": 1},
    "partition": {"strategy": "two_class", "shared_per_class": 4, "alpha_share": 0.5},
    "fed": {"K": 2, "R": 2, "E": 1, "batch_size": 16},
    "eval": {"attacks": ["fgsm", "pgd", "bim", "deepfool", "cw"], "subsample": 6},
}


def small_config(tmp_path, **sections):
    data = json.loads(json.dumps(SMALL))
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    data["experiment"]["out_dir"] = str(tmp_path)
    return data


def write_config(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def report_without_timing(out: Path):
    report = json.loads((out / "report.json").read_text())
    report.pop("timing")
    return report


def test_train_central_smoke(tmp_path):
    report = run_pipeline("train-central", parse_config(small_config(tmp_path)))
    assert report.natural_acc is not None
    assert set(report.robust_acc) == {"fgsm", "pgd", "bim", "deepfool", "cw"}
    assert all(v is not None for v in report.robust_acc.values())
    assert len(report.epoch_losses) == 2
    assert (tmp_path / "model.fatm").is_file() and (tmp_path / "epochs.csv").is_file()
    assert "wall_time_s" in json.loads((tmp_path / "report.json").read_text())["timing"]


def test_train_central_writes_accuracy_curve_on_eval_cadence(tmp_path):
    data = small_config(tmp_path, nn={"epochs": 3}, eval={"every": 2})
    report = run_pipeline("train-central", parse_config(data))
    curve = pd.read_csv(tmp_path / "epochs.csv")
    assert list(curve.columns) == [
        "epoch", "loss", "natural_acc", "robust_fgsm", "robust_pgd", "robust_bim", "robust_deepfool", "robust_cw",
    ]
    assert curve["epoch"].tolist() == [0, 1, 2]
    assert curve["natural_acc"].isna().tolist() == [True, False, False]
    assert curve["natural_acc"].iloc[-1] == pytest.approx(report.natural_acc)
    assert curve["robust_pgd"].iloc[-1] == pytest.approx(report.robust_acc["pgd"])


def test_minimal_blob_config_runs_with_default_crop(tmp_path):
    cfg = parse_config(
        {
            "experiment": {"out_dir": str(tmp_path), "progress": False},
            "nn": {"epochs": 1},
            "data": {"blobs": {"per_class": 8, "test_per_class": 4}},
            "attack": {"iters": 1},
            "eval": {"attacks": ["fgsm"], "headline_attack": "fgsm"},
        }
    )
    assert cfg.augment.crop_size is None
    report = run_pipeline("train-central", cfg)
    assert report.natural_acc is not None and report.robust_acc["fgsm"] is not None
    assert (tmp_path / "report.json").is_file()


def test_train_fed_writes_round_curves(tmp_path):
    report = run_pipeline("train-fed", parse_config(small_config(tmp_path)))
    rounds = pd.read_csv(tmp_path / "rounds.csv")
    assert rounds["round"].tolist() == [1, 2]
    assert len(report.rounds) == 2 and "wall_time_s" not in report.rounds[0]
    assert report.natural_acc == report.rounds[-1]["natural_acc"]
    assert len((tmp_path / "rounds.jsonl").read_text().splitlines()) == 2


def test_sharing_sweep_emits_one_row_per_fraction(tmp_path):
    shares = [round(0.1 * i, 1) for i in range(11)]
    data = small_config(
        tmp_path,
        partition={"alpha_share": shares},
        fed={"R": 1},
        eval={"attacks": ["pgd"], "headline_attack": "pgd"},
    )
    report = run_pipeline("train-fed", parse_config(data))
    sweep = pd.read_csv(tmp_path / "sweep.csv")
    assert list(sweep.columns) == ["sharing_percent", "natural_acc", "robust_acc"]
    assert sweep["sharing_percent"].tolist() == [float(10 * i) for i in range(11)]
    assert report.fit["robust_acc"]["excluded_x"] == [0.0]
    assert report.natural_acc is None
    assert (tmp_path / "model_share50.fatm").is_file()


def test_attack_eval_on_saved_model(tmp_path):
    run_pipeline("train-central", parse_config(small_config(tmp_path / "train")))
    data = small_config(tmp_path / "eval", eval={"model_path": str(tmp_path / "train" / "model.fatm")})
    report = run_pipeline("attack-eval", parse_config(data))
    attacks = pd.read_csv(tmp_path / "eval" / "attacks.csv")
    assert attacks["attack"].tolist() == ["natural", "fgsm", "pgd", "bim", "deepfool", "cw"]
    assert report.param_checksum is not None


def test_partition_inspect(tmp_path):
    report = run_pipeline("partition-inspect", parse_config(small_config(tmp_path)))
    assert report.partition["K"] == 2
    frame = pd.read_csv(tmp_path / "partition.csv")
    assert frame["shared_sample"].tolist() == [4, 4]


def test_fit_regression_reports_reference(tmp_path):
    report = run_pipeline("fit-regression", parse_config({"experiment": {"out_dir": str(tmp_path)}}))
    assert len(report.regression) == 4
    assert pd.read_csv(tmp_path / "regression.csv")["reference_a"].notna().all()


def test_fit_regression_on_explicit_points(tmp_path):
    data = {"experiment": {"out_dir": str(tmp_path)}, "regression": {"points": [[1, 1.0], [10, 3.0], [100, 5.0]]}}
    report = run_pipeline("fit-regression", parse_config(data))
    assert report.fit["r_squared"] == pytest.approx(1.0)


@pytest.mark.parametrize("command", ["train-central", "train-fed"])
def test_same_config_and_seed_give_identical_reports(tmp_path, command):
    cfg = parse_config(small_config(tmp_path))
    run_pipeline(command, cfg)
    first = report_without_timing(tmp_path)
    run_pipeline(command, cfg)
    assert report_without_timing(tmp_path) == first


def test_parallel_clients_give_identical_report(tmp_path):
    run_pipeline("train-fed", parse_config(small_config(tmp_path, fed={"max_concurrency": 1})))
    serial = report_without_timing(tmp_path)
    run_pipeline("train-fed", parse_config(small_config(tmp_path, fed={"max_concurrency": 2})))
    parallel = report_without_timing(tmp_path)
    serial["config"]["fed"].pop("max_concurrency")
    parallel["config"]["fed"].pop("max_concurrency")
    assert serial == parallel


# -- command line -----------------------------------------------------------------


def test_cli_success(tmp_path):
    path = write_config(tmp_path, small_config(tmp_path / "unused"))
    code = run_experiment.main(["partition-inspect", "--config", str(path), "--out", str(tmp_path / "out"), "--seed", "4", "--no-env"])
    assert code == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["seed"] == 4


def test_cli_invalid_config_exits_nonzero_with_field_diagnostics(tmp_path, caplog):
    path = write_config(tmp_path, {"nn": {"activation": "swish2"}})
    code = run_experiment.main(["train-central", "--config", str(path), "--no-env"])
    assert code == 2
    assert "nn.activation" in caplog.text


def test_cli_missing_config_file(tmp_path):
    assert run_experiment.main(["train-central", "--config", str(tmp_path / "nope.yaml"), "--no-env"]) == 2


def test_cli_crop_mismatch_is_a_config_error(tmp_path):
    path = write_config(tmp_path, small_config(tmp_path, augment={"crop_size": 32}))
    assert run_experiment.main(["train-central", "--config", str(path), "--no-env"]) == 2


def test_cli_rejects_unknown_command(tmp_path):
    with pytest.raises(SystemExit):
        run_experiment.main(["train-everything", "--config", "x.yaml"])


def test_activation_sweep_script(tmp_path):
    spec = importlib.util.spec_from_file_location("activation_sweep", ROOT / "01_Activation_Sweep.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    path = write_config(tmp_path, small_config(tmp_path, nn={"epochs": 1}, eval={"attacks": ["pgd"], "headline_attack": "pgd"}))
    out = tmp_path / "sweep.csv"
    code = module.main([
        "--config", str(path), "--output", str(out), "--activations", "telu", "relu",
        "--schedules", "fixed", "--pgd-iters", "1", "2", "--max-concurrency", "2", "--no-env",
    ])
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["activation", "schedule", "pgd_iters", "natural_acc", "robust_acc"]
    assert frame[["activation", "pgd_iters"]].values.tolist() == [["relu", 1], ["relu", 2], ["telu", 1], ["telu", 2]]
