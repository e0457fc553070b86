"""Training objectives: standard, split, capped and targeted.

Each objective is built from the cross-entropy ``L`` of the model output on
a train batch and on a test batch:

* standard: ``L_train``
* split:    ``L_train - L_test``
* capped:   split while test accuracy ``> k``, standard otherwise
* targeted: split while test accuracy ``> u``, ``L_train + L_test`` while
  it is ``< l``, standard inside the band ``[l, u]``

The capped/targeted branch is chosen once per epoch from the full test set
(:func:`epoch_branch`) and frozen for every minibatch of that epoch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DataError
from .tensor import Tensor

KINDS = ("standard", "split", "capped", "targeted")

TRAIN_MINUS_TEST = "train_minus_test"
TRAIN_ONLY = "train_only"
TRAIN_PLUS_TEST = "train_plus_test"


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "standard"
    k: float = 0.11
    l: float = 0.0  # noqa: E741
    u: float = 1.0
    loss: str = "cross_entropy"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown objective kind {self.kind!r}")
        if self.loss != "cross_entropy":
            raise ConfigError(f"unsupported loss {self.loss!r}")
        for name in ("k", "l", "u"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.kind == "targeted" and self.l > self.u:
            raise ConfigError(f"targeted objective needs l <= u, got l={self.l}, u={self.u}")

    @property
    def needs_test(self) -> bool:
        return self.kind != "standard"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochBranch:
    active_case: str
    measured_test_accuracy: float


def cross_entropy(output, labels) -> Tensor:
    """Mean negative log-likelihood after a log-softmax of ``output``.

    When the model already ends in a softmax this applies softmax twice,
    which is intended.
    """
    output = T.as_tensor(output)
    labels = np.asarray(labels)
    if output.ndim != 2 or output.shape[1] < 2:
        raise ContractError(f"cross_entropy needs N x C output with C >= 2, got {output.shape}")
    if labels.shape != (output.shape[0],):
        raise ContractError(f"labels shape {labels.shape} does not match output {output.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= output.shape[1]):
        raise DataError(f"labels must lie in [0, {output.shape[1]})")
    picked = T.take_rows(T.log_softmax(output), labels)
    return -T.mean(picked)


def accuracy(output, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    data = output.data if isinstance(output, Tensor) else np.asarray(output)
    labels = np.asarray(labels)
    if data.shape[0] < 1:
        raise ContractError("accuracy needs at least one row")
    return float(np.mean(np.argmax(data, axis=1) == labels))


def branch_for(spec: ObjectiveSpec, test_accuracy: float) -> EpochBranch:
    """Case selection from a measured test accuracy (strict inequalities)."""
    m = float(test_accuracy)
    if spec.kind == "standard":
        case = TRAIN_ONLY
    elif spec.kind == "split":
        case = TRAIN_MINUS_TEST
    elif spec.kind == "capped":
        case = TRAIN_MINUS_TEST if m > spec.k else TRAIN_ONLY
    elif m > spec.u:
        case = TRAIN_MINUS_TEST
    elif m < spec.l:
        case = TRAIN_PLUS_TEST
    else:
        case = TRAIN_ONLY
    return EpochBranch(case, m)


def measure_accuracy(model, dataset, batch_size: int = 4096) -> float:
    correct = 0
    n = len(dataset.labels)
    with T.no_grad():
        for start in range(0, n, batch_size):
            out = model.forward(dataset.inputs[start:start + batch_size])
            correct += int(np.sum(np.argmax(out.data, axis=1) == dataset.labels[start:start + batch_size]))
    return correct / n


def epoch_branch(spec: ObjectiveSpec, model, test_set) -> EpochBranch:
    """Measure test accuracy once on the full test set and pick the case for this epoch."""
    if spec.kind in ("standard", "split"):
        return branch_for(spec, float("nan"))
    return branch_for(spec, measure_accuracy(model, test_set))


def evaluate_objective(spec: ObjectiveSpec, model, train_batch, test_batch, branch: EpochBranch) -> Tensor:
    """Objective value for one minibatch; batches are ``(inputs, labels)`` pairs."""
    expected = branch_for(spec, branch.measured_test_accuracy).active_case
    if branch.active_case != expected:
        raise ContractError(
            f"branch {branch.active_case!r} inconsistent with {spec.kind} objective "
            f"at test accuracy {branch.measured_test_accuracy}"
        )
    x_train, y_train = train_batch
    loss_train = cross_entropy(model.forward(x_train), y_train)
    if branch.active_case == TRAIN_ONLY:
        return loss_train
    if test_batch is None:
        raise ContractError(f"{spec.kind} objective needs a test batch")
    x_test, y_test = test_batch
    loss_test = cross_entropy(model.forward(x_test), y_test)
    if branch.active_case == TRAIN_MINUS_TEST:
        return loss_train - loss_test
    return loss_train + loss_test
