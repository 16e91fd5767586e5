"""
Experiment pipelines behind the CLI subcommands.

Each pipeline takes a validated `ExperimentConfig`, writes its artifacts
(CSV curves, model file, partition report) into the output directory, and
returns the `RunReport` that `run_experiment` persists as report.json.
"""

import logging
import os
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.Auxiliary.Errors import ExperimentConfigError, ShapeMismatchError
from src.Auxiliary.Model_Store import load_model, save_model
from src.Auxiliary.Reports import RunReport, append_jsonl, write_csv, write_json
from src.Auxiliary.Seeding import derive_seed
from src.Data.Cifar_Loader import load_cifar10
from src.Data.Labeled_Batch import LabeledBatch
from src.Data.Partition import PartitionPlan, build_partition
from src.Data.Synthetic_Blobs import make_blobs
from src.Engine.Network import Network, build_mini_resnet, build_mlp
from src.Federation.Aggregator import RoundReport, param_checksum, run_rounds
from src.Federation.Client import adversarial_train
from src.Harness.Evaluation import EvalSnapshot, evaluate_all
from src.Harness.Experiment_Config import ExperimentConfig
from src.Harness.Regression import REFERENCE_SHARING_TABLE, compare_with_reference, fit_log_regression, fit_sweep

logger = logging.getLogger(__name__)

CENTRAL_TRAIN_STREAM = 0xCE47
EVAL_STREAM = 0xE7A1
MODEL_FILE = "model.fatm"


def load_data(cfg: ExperimentConfig) -> Tuple[LabeledBatch, LabeledBatch]:
    if cfg.data.source == "cifar10":
        directory = cfg.data.cifar_dir or os.getenv("FEDAT_DATA_DIR")
        if not directory:
            raise ExperimentConfigError([("data.cifar_dir", "required for source 'cifar10' (or set FEDAT_DATA_DIR)")])
        train, test = load_cifar10(directory)
    else:
        train, test = make_blobs(cfg.data.blobs)
    if cfg.data.train_subsample is not None and cfg.data.train_subsample < len(train):
        train = train.subset(np.arange(cfg.data.train_subsample))
    logger.info("Data: %s, %d train / %d test, image shape %s", cfg.data.source, len(train), len(test), train.image_shape)
    return train, test


def build_network(cfg: ExperimentConfig, input_shape, n_classes: int) -> Network:
    nn = cfg.nn
    seed = cfg.seed if nn.init_seed is None else nn.init_seed
    if nn.architecture == "mlp":
        return build_mlp(input_shape, n_classes, nn.hidden, nn.activation, nn.batchnorm, seed)
    return build_mini_resnet(input_shape, n_classes, nn.depth, nn.width, nn.activation, nn.batchnorm, seed)


def _check_augment(cfg: ExperimentConfig, train: LabeledBatch) -> None:
    side = train.image_shape[-1]
    if cfg.augment.crop_size is not None and cfg.augment.crop_size != side:
        raise ExperimentConfigError([("augment.crop_size", f"must equal the image side {side}")])


def _evaluate(cfg: ExperimentConfig, net: Network, test: LabeledBatch, *keys: int) -> EvalSnapshot:
    return evaluate_all(net, test, cfg.eval, cfg.attack, derive_seed(cfg.seed, EVAL_STREAM, *keys))


def _new_report(command: str, cfg: ExperimentConfig) -> RunReport:
    return RunReport(command=command, name=cfg.experiment.name, seed=cfg.seed, config=cfg.model_dump(mode="json"))


def _epoch_row(epoch: int, loss: float, snapshot: Optional[EvalSnapshot], attacks: List[str]) -> Dict:
    row = {"epoch": epoch, "loss": loss, "natural_acc": snapshot.natural_acc if snapshot else None}
    row.update({f"robust_{name}": snapshot.robust_acc.get(name) if snapshot else None for name in attacks})
    return row


def run_train_central(cfg: ExperimentConfig, out: Path) -> RunReport:
    train, test = load_data(cfg)
    _check_augment(cfg, train)
    net = build_network(cfg, train.image_shape, train.n_classes)
    logger.info("Centralized training: %r for %d epoch(s)", net, cfg.nn.epochs)

    # evaluated every `eval.every` epochs and after the last one
    snapshots: Dict[int, EvalSnapshot] = {}

    def evaluate_epoch(e: int, current: Network) -> None:
        if (e + 1) % cfg.eval.every == 0 or e + 1 == cfg.nn.epochs:
            snapshots[e] = _evaluate(cfg, current.in_mode("test"), test, e + 1)
            logger.info("epoch %d/%d: natural %s, robust %s", e + 1, cfg.nn.epochs,
                        snapshots[e].natural_acc, snapshots[e].robust_acc)

    result = adversarial_train(
        net, train, cfg.augment_plan(), cfg.nn.sgd(),
        epochs=cfg.nn.epochs,
        batch_size=cfg.nn.batch_size,
        seed=derive_seed(cfg.seed, CENTRAL_TRAIN_STREAM),
        progress=cfg.experiment.progress,
        on_epoch=evaluate_epoch,
    )
    trained = result.net.in_mode("test")
    snapshot = snapshots[cfg.nn.epochs - 1]

    report = _new_report("train-central", cfg)
    report.set_accuracies(snapshot.natural_acc, snapshot.robust_acc, snapshot.attack_failures)
    report.epoch_losses = result.epoch_losses
    curve = pd.DataFrame([
        _epoch_row(e, loss, snapshots.get(e), list(cfg.eval.attacks))
        for e, loss in enumerate(result.epoch_losses)
    ])
    report.artifacts.append(str(write_csv(curve, out / "epochs.csv")))
    report.model_path = str(save_model(trained, out / MODEL_FILE))
    report.param_checksum = param_checksum(trained)
    return report


def _round_row(report: RoundReport, alpha_share: float) -> Dict:
    row = {"alpha_share": alpha_share, "round": report.round, "natural_acc": report.natural_acc}
    row.update({f"robust_{name}": value for name, value in report.robust_acc.items()})
    return row


def _share_tag(alpha_share: float) -> str:
    return f"{round(alpha_share * 100, 6):g}"


def run_train_fed(cfg: ExperimentConfig, out: Path) -> RunReport:
    train, test = load_data(cfg)
    _check_augment(cfg, train)
    alphas = cfg.partition.alpha_values
    sweeping = len(alphas) > 1
    jsonl = out / "rounds.jsonl"
    jsonl.unlink(missing_ok=True)

    report = _new_report("train-fed", cfg)
    round_rows: List[Dict] = []
    round_dumps: List[Dict] = []
    sweep_rows: List[Dict] = []
    last: Optional[Tuple[Network, List[RoundReport]]] = None
    round_wall_time = 0.0
    for alpha in alphas:
        plan = build_partition(
            train.labels, cfg.partition.strategy, cfg.fed.K, cfg.seed,
            shared_per_class=cfg.partition.shared_per_class,
            alpha_share=alpha,
            beta=cfg.partition.beta_dirichlet,
            n_classes=train.n_classes,
        )
        logger.info("Federation at alpha_share=%s: %s", alpha, [len(plan.client_set(k)) for k in range(plan.n_clients)])
        net = build_network(cfg, train.image_shape, train.n_classes)
        fed = run_rounds(
            cfg.fed, plan, train, net, cfg.augment_plan(), cfg.nn.sgd(), cfg.seed,
            evaluate=lambda global_net, r: _evaluate(cfg, global_net.in_mode("test"), test, r),
            eval_every=cfg.eval.every,
            progress=cfg.experiment.progress,
        )
        for round_report in fed.reports:
            append_jsonl({"alpha_share": alpha, **round_report.model_dump()}, jsonl)
            round_rows.append(_round_row(round_report, alpha))
            round_dumps.append({"alpha_share": alpha, **round_report.model_dump(exclude={"wall_time_s"})})
            round_wall_time += round_report.wall_time_s
        final = fed.reports[-1]
        sweep_rows.append(
            {
                "sharing_percent": round(alpha * 100, 6),
                "natural_acc": final.natural_acc,
                "robust_acc": final.robust_acc.get(cfg.eval.headline_attack),
            }
        )
        model_name = f"model_share{_share_tag(alpha)}.fatm" if sweeping else MODEL_FILE
        report.model_path = str(save_model(fed.net.in_mode("test"), out / model_name))
        last = (fed.net, fed.reports)

    net, rounds = last
    report.rounds = round_dumps
    report.timing["rounds_wall_time_s"] = round_wall_time
    report.param_checksum = param_checksum(net)
    report.artifacts.append(str(write_csv(round_rows, out / "rounds.csv")))
    report.artifacts.append(str(jsonl))

    if sweeping:
        sweep = pd.DataFrame(sweep_rows, columns=["sharing_percent", "natural_acc", "robust_acc"])
        report.sweep = sweep_rows
        report.artifacts.append(str(write_csv(sweep, out / "sweep.csv")))
        report.fit = _fit_sweep_table(sweep, cfg.regression.x_domain)
    else:
        report.set_accuracies(rounds[-1].natural_acc, rounds[-1].robust_acc, rounds[-1].attack_failures)
    return report


def _fit_sweep_table(sweep: pd.DataFrame, x_domain: str) -> Optional[Dict]:
    fits = {}
    for column in ("robust_acc", "natural_acc"):
        frame = sweep.dropna(subset=[column])
        try:
            fits[column] = fit_sweep(frame, column, x_domain).model_dump()
        except ValueError as exc:
            logger.warning("Cannot fit %s of the sweep: %s", column, exc)
            fits[column] = None
    return fits


def run_attack_eval(cfg: ExperimentConfig, out: Path) -> RunReport:
    if not cfg.eval.model_path:
        raise ExperimentConfigError([("eval.model_path", "required for attack-eval")])
    model_path = Path(cfg.eval.model_path)
    if not model_path.is_file():
        raise FileNotFoundError(f"Model file not found: {model_path}")
    net = load_model(model_path)
    _, test = load_data(cfg)
    if net.input_shape != test.image_shape:
        raise ShapeMismatchError("input", net.input_shape, test.image_shape)
    snapshot = _evaluate(cfg, net, test)

    report = _new_report("attack-eval", cfg)
    report.set_accuracies(snapshot.natural_acc, snapshot.robust_acc, snapshot.attack_failures)
    report.model_path = str(model_path)
    report.param_checksum = param_checksum(net)
    rows = [{"attack": "natural", "accuracy": snapshot.natural_acc, "failures": 0}]
    rows += [
        {"attack": name, "accuracy": acc, "failures": snapshot.attack_failures.get(name, 0)}
        for name, acc in snapshot.robust_acc.items()
    ]
    report.artifacts.append(str(write_csv(rows, out / "attacks.csv")))
    return report


def _histogram_frame(plan: PartitionPlan, labels: np.ndarray, n_classes: int) -> pd.DataFrame:
    hist = plan.histograms(labels, n_classes)
    frame = pd.DataFrame(hist, columns=[f"class_{c}" for c in range(n_classes)])
    frame.insert(0, "client", np.arange(plan.n_clients))
    frame["local_size"] = hist.sum(axis=1)
    frame["shared_sample"] = len(plan.shared_sample)
    return frame


def run_partition_inspect(cfg: ExperimentConfig, out: Path) -> RunReport:
    train, _ = load_data(cfg)
    alpha = cfg.partition.alpha_values[0]
    plan = build_partition(
        train.labels, cfg.partition.strategy, cfg.fed.K, cfg.seed,
        shared_per_class=cfg.partition.shared_per_class,
        alpha_share=alpha,
        beta=cfg.partition.beta_dirichlet,
        n_classes=train.n_classes,
    )
    report = _new_report("partition-inspect", cfg)
    report.partition = plan.report(train.labels, train.n_classes)
    report.artifacts.append(str(write_json(report.partition, out / "partition.json")))
    report.artifacts.append(str(write_csv(_histogram_frame(plan, train.labels, train.n_classes), out / "partition.csv")))
    return report


def run_fit_regression(cfg: ExperimentConfig, out: Path) -> RunReport:
    reg = cfg.regression
    if reg.table_csv:
        path = Path(reg.table_csv)
        if not path.is_file():
            raise FileNotFoundError(f"Sweep table not found: {path}")
        table = pd.read_csv(path)
        if "sharing_percent" not in table:
            raise ExperimentConfigError([("regression.table_csv", "table needs a sharing_percent column")])
    else:
        table = REFERENCE_SHARING_TABLE

    report = _new_report("fit-regression", cfg)
    report.regression = compare_with_reference(table)
    if reg.points:
        report.fit = fit_log_regression(reg.points, reg.x_domain).model_dump()
    else:
        report.fit = _fit_sweep_table(table, reg.x_domain)
    for row in report.regression:
        logger.info(
            "%s (%s): a=%.4f b=%.4f R2=%.4f | reference a=%.4f b=%.4f R2=%.4f",
            row["column"], row["x_domain"], row["a"], row["b"], row["r_squared"],
            row["reference_a"], row["reference_b"], row["reference_r_squared"],
        )
    report.artifacts.append(str(write_csv(report.regression, out / "regression.csv")))
    return report


COMMANDS: Dict[str, Callable[[ExperimentConfig, Path], RunReport]] = {
    "train-central": run_train_central,
    "train-fed": run_train_fed,
    "attack-eval": run_attack_eval,
    "partition-inspect": run_partition_inspect,
    "fit-regression": run_fit_regression,
}


def run_experiment(command: str, cfg: ExperimentConfig) -> RunReport:
    """Run one pipeline and write report.json into the configured output directory."""
    if command not in COMMANDS:
        raise ValueError(f"Unknown command '{command}'. Expected one of {', '.join(COMMANDS)}")
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    logger.info("Running %s '%s' (seed %d) -> %s", command, cfg.experiment.name, cfg.seed, out)
    report = COMMANDS[command](cfg, out)
    report.timing["wall_time_s"] = time.perf_counter() - started
    write_json(report, out / "report.json")
    return report
