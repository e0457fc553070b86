"""Trial runner, difficulty measurements, sweeps and CSV learning curves."""

from __future__ import annotations

import csv
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import SUBSET_SIZES, LabeledDataset
from .errors import ConfigError, ContractError, DivergenceError
from .models import Model, ModelConfig, build, first_layer_grad_norm
from .objectives import (TRAIN_ONLY, ObjectiveSpec, branch_for, cross_entropy, epoch_branch,
                         evaluate_objective)
from .optim import make_optimizer

log = logging.getLogger(__name__)

SEVERE_OVERFIT_SLACK = 0.02
TRAIN_THRESHOLD = 0.9


@dataclass(frozen=True)
class StopRule:
    """Conditions that must all hold for an epoch to count as reaching the threshold.

    Unset conditions are ignored.  With ``halt`` the trial stops at the
    first such epoch; ``fixed_epochs`` disables the rule entirely.
    """

    train_acc: float | None = None
    test_acc_max: float | None = None
    test_acc_min: float | None = None
    overfit_gap: float | None = None
    fixed_epochs: bool = False
    halt: bool = True

    def __post_init__(self):
        for name in ("train_acc", "test_acc_max", "test_acc_min", "overfit_gap"):
            v = getattr(self, name)
            if v is not None and not -1.0 <= v <= 1.5:
                raise ConfigError(f"stop threshold {name}={v} out of range")

    def satisfied(self, row: "EpochRow") -> bool:
        if self.fixed_epochs:
            return False
        checks = []
        if self.train_acc is not None:
            checks.append(row.train_acc >= self.train_acc)
        if self.test_acc_max is not None:
            checks.append(row.test_acc <= self.test_acc_max)
        if self.test_acc_min is not None:
            checks.append(row.test_acc >= self.test_acc_min)
        if self.overfit_gap is not None:
            checks.append(row.overfit_gap >= self.overfit_gap)
        return bool(checks) and all(checks)


@dataclass
class TrialConfig:
    model: ModelConfig
    objective: ObjectiveSpec
    train: LabeledDataset
    test: LabeledDataset
    optimizer: str = "adam"
    lr: float = 1e-4
    batch_size: int = 256
    max_epochs: int = 100
    stop_rule: StopRule = field(default_factory=lambda: StopRule(fixed_epochs=True))
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for ds in (self.train, self.test):
            if ds.sample_shape != self.model.input_shape:
                raise ConfigError(f"dataset {ds.name!r} samples {ds.sample_shape} do not match "
                                  f"model input {self.model.input_shape}")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "objective": self.objective.to_dict(),
            "train": self.train.summary(),
            "test": self.test.summary(),
            "optimizer": self.optimizer,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "stop_rule": asdict(self.stop_rule),
            "seed": self.seed,
        }


@dataclass
class EpochRow:
    epoch: int
    branch: str
    objective: float
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    overfit_gap: float
    first_layer_grad_norm: float


@dataclass
class TrialOutcome:
    epochs_to_threshold: int | None
    peak_grad_norm: float
    peak_grad_epoch: int
    final_grad_norm: float

    @property
    def reached(self) -> bool:
        return self.epochs_to_threshold is not None


@dataclass
class TrialRecord:
    rows: list[EpochRow]
    outcome: TrialOutcome
    config: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]


def _full_metrics(model, ds: LabeledDataset, batch_size: int = 4096) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a whole dataset."""
    n = len(ds)
    loss_sum = 0.0
    correct = 0
    with T.no_grad():
        for start in range(0, n, batch_size):
            x = ds.inputs[start:start + batch_size]
            y = ds.labels[start:start + batch_size]
            out = model.forward(x)
            loss_sum += cross_entropy(out, y).item() * len(y)
            correct += int(np.sum(np.argmax(out.data, axis=1) == y))
    return loss_sum / n, correct / n


def _outcome(rows: list[EpochRow], reached: int | None) -> TrialOutcome:
    norms = [r.first_layer_grad_norm for r in rows]
    if not norms:
        return TrialOutcome(reached, float("nan"), 0, float("nan"))
    peak = int(np.argmax(norms))
    return TrialOutcome(reached, norms[peak], rows[peak].epoch, norms[-1])


def run_trial(config: TrialConfig) -> TrialRecord:
    return train_model(config)[1]


def train_model(config: TrialConfig) -> tuple[Model, TrialRecord]:
    """Train one model under ``config.objective`` and record per-epoch metrics.

    Each epoch: pick the objective branch from the full test set, run one
    pass of shuffled minibatches (each train minibatch paired with a test
    minibatch for objectives that use one), then record full-set losses
    and accuracies.  ``first_layer_grad_norm`` is the mean over the
    epoch's minibatches of the first weight layer's gradient norm.
    """
    model = build(config.model)
    opt = make_optimizer(config.optimizer, model.parameters(), config.lr)
    rng = np.random.default_rng([config.seed, 7])
    spec = config.objective
    train, test = config.train, config.test
    n_train, n_test = len(train), len(test)
    bs = config.batch_size
    rows: list[EpochRow] = []
    reached = None
    last_test_acc = None

    for epoch in range(1, config.max_epochs + 1):
        if last_test_acc is None or spec.kind in ("standard", "split"):
            branch = epoch_branch(spec, model, test)
        else:
            # parameters have not moved since last epoch's full test pass
            branch = branch_for(spec, last_test_acc)
        order = rng.permutation(n_train)
        test_order = rng.permutation(n_test)
        objective_sum, norm_sum, steps = 0.0, 0.0, 0
        for b, start in enumerate(range(0, n_train, bs)):
            idx = order[start:start + bs]
            train_batch = (train.inputs[idx], train.labels[idx])
            test_batch = None
            if branch.active_case != TRAIN_ONLY:
                t0 = (b * bs) % n_test
                tidx = test_order[np.arange(t0, t0 + len(idx)) % n_test]
                test_batch = (test.inputs[tidx], test.labels[tidx])
            loss = evaluate_objective(spec, model, train_batch, test_batch, branch)
            value = loss.item()
            if not math.isfinite(value):
                record = TrialRecord(rows, _outcome(rows, reached), config.to_dict())
                raise DivergenceError(f"non-finite objective {value} in epoch {epoch}",
                                      last_good_epoch=epoch - 1, record=record)
            T.backward(loss)
            norm_sum += first_layer_grad_norm(model)
            objective_sum += value
            steps += 1
            opt.step()

        train_loss, train_acc = _full_metrics(model, train)
        test_loss, test_acc = _full_metrics(model, test)
        last_test_acc = test_acc
        row = EpochRow(epoch, branch.active_case, objective_sum / steps, train_loss, test_loss,
                       train_acc, test_acc, train_acc - test_acc, norm_sum / steps)
        rows.append(row)
        log.debug("epoch %d %s", epoch, row)
        if reached is None and config.stop_rule.satisfied(row):
            reached = epoch
            if config.stop_rule.halt:
                break
    return model, TrialRecord(rows, _outcome(rows, reached), config.to_dict())


def naive_threshold(class_count: int) -> float:
    return 1.0 / class_count


def severe_overfit_rule(class_count: int, train_threshold: float = TRAIN_THRESHOLD,
                        slack: float = SEVERE_OVERFIT_SLACK) -> StopRule:
    """Train accuracy near one while test accuracy stays near chance."""
    return StopRule(train_acc=train_threshold, test_acc_max=naive_threshold(class_count) + slack)


def epochs_to_memorize(config: TrialConfig, k: float, train_threshold: float = TRAIN_THRESHOLD,
                       slack: float = SEVERE_OVERFIT_SLACK) -> int | None:
    """First epoch with train accuracy >= threshold and test accuracy <= k + slack.

    ``None`` means the threshold was not reached within ``max_epochs``.
    """
    if config.objective.kind != "capped" or config.objective.k != k:
        raise ContractError(f"epochs_to_memorize needs a capped objective with k={k}, "
                            f"got {config.objective}")
    cfg = replace(config, stop_rule=StopRule(train_acc=train_threshold, test_acc_max=k + slack))
    return run_trial(cfg).outcome.epochs_to_threshold


def epochs_to_generalize(config: TrialConfig, train_threshold: float = TRAIN_THRESHOLD) -> int | None:
    """First epoch at which the standard objective reaches the train-accuracy threshold."""
    cfg = replace(config, objective=ObjectiveSpec("standard"),
                  stop_rule=StopRule(train_acc=train_threshold))
    return run_trial(cfg).outcome.epochs_to_threshold


def median_epochs(values: Sequence[int | None]) -> float:
    """Median with did-not-reach counted as +inf."""
    return statistics.median(math.inf if v is None else float(v) for v in values)


@dataclass
class SweepRow:
    setting: str | float
    epochs: list[int | None]

    @property
    def median(self) -> float:
        return median_epochs(self.epochs)


class SweepError(RuntimeError):
    pass


DatasetFactory = Callable[[object, int], tuple[LabeledDataset, LabeledDataset]]


def _sweep(base: TrialConfig, settings, make_data: DatasetFactory, seeds: Sequence[int],
           label: str) -> list[SweepRow]:
    table = []
    for setting in settings:
        epochs = []
        for seed in seeds:
            try:
                train, test = make_data(setting, seed)
                cfg = replace(base, train=train, test=test, seed=seed,
                              model=replace(base.model, seed=seed))
                epochs.append(epochs_to_memorize(cfg, base.objective.k))
            except Exception as exc:
                raise SweepError(f"{label} {setting!r}, seed {seed}: {exc}") from exc
        table.append(SweepRow(setting, epochs))
    return table


def sweep_dataset_size(base_config: TrialConfig, sizes: Sequence, make_data: DatasetFactory,
                       seeds: Sequence[int] = (0,)) -> list[SweepRow]:
    """epochs_to_memorize per dataset size.

    ``sizes`` holds size-class names (see ``SUBSET_SIZES``) or integer
    counts; ``make_data(size, seed)`` returns the (train, test) pair.
    Every size uses the same seeds.
    """
    if not sizes:
        raise ConfigError("sizes must be nonempty")
    for s in sizes:
        if isinstance(s, str) and s not in SUBSET_SIZES:
            raise ConfigError(f"unknown size class {s!r}")
    return _sweep(base_config, sizes, make_data, seeds, "size")


def sweep_noise_fraction(base_config: TrialConfig, fractions: Sequence[float],
                         make_data: DatasetFactory, seeds: Sequence[int] = (0,)) -> list[SweepRow]:
    if not fractions:
        raise ConfigError("fractions must be nonempty")
    return _sweep(base_config, fractions, make_data, seeds, "noise fraction")


@dataclass
class QualityScore:
    score: float
    split_epochs: int | None
    standard_epochs: int | None
    did_not_reach: bool
    indeterminate: bool


def dataset_quality_score(ds_train: LabeledDataset, ds_test: LabeledDataset, probe: ModelConfig,
                          max_epochs: int = 200, lr: float = 1e-4, batch_size: int = 256,
                          optimizer: str = "adam", seed: int = 0) -> QualityScore:
    """Epoch gap between severe overfitting (split) and learning (standard).

    Larger means more resistant to memorization.  If only the split probe
    fails to reach its threshold the score is +inf; if only the standard
    probe fails it is -inf.  Both failing, or a split objective that is
    identically zero (train and test coincide), is indeterminate (nan).
    """
    base = TrialConfig(probe, ObjectiveSpec("standard"), ds_train, ds_test, optimizer, lr,
                       batch_size, max_epochs, StopRule(train_acc=TRAIN_THRESHOLD), seed)
    standard = run_trial(base)
    split = run_trial(replace(base, objective=ObjectiveSpec("split"),
                              stop_rule=severe_overfit_rule(probe.class_count)))
    e_std = standard.outcome.epochs_to_threshold
    e_split = split.outcome.epochs_to_threshold
    degenerate = all(v == 0.0 for v in split.column("objective"))
    if e_split is not None and e_std is not None:
        return QualityScore(float(e_split - e_std), e_split, e_std, False, False)
    if (e_split is None and e_std is None) or (e_split is None and degenerate):
        return QualityScore(math.nan, e_split, e_std, True, True)
    score = math.inf if e_split is None else -math.inf
    return QualityScore(score, e_split, e_std, True, False)


# -- CSV ----------------------------------------------------------------------

CSV_COLUMNS = [f.name for f in fields(EpochRow)]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def emit_csv(record: TrialRecord, path) -> None:
    """One header row plus one row per epoch; reals at 9 significant digits."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in record.rows:
            writer.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])


def read_csv(path) -> list[EpochRow]:
    types = {f.name: f.type for f in fields(EpochRow)}
    rows = []
    with open(Path(path), newline="") as fh:
        for raw in csv.DictReader(fh):
            vals = {}
            for name, text in raw.items():
                t = types[name]
                vals[name] = int(text) if t in (int, "int") else text if t in (str, "str") else float(text)
            rows.append(EpochRow(**vals))
    return rows
