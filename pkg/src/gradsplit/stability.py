"""Loss stability under parameter perturbations, and its input-space equivalent.

The stability radius of a parameter point is estimated by Monte Carlo:
for each radius on a grid, the loss is re-evaluated at ``theta + r * c``
for a fixed set of random unit directions ``c``, and the largest radius at
which every ``|J(theta) - J(theta + r c)|`` stays strictly below ``delta``
is reported.

For a single invertible layer ``Y = f(W a + b)``, a parameter shift can be
traded for an input shift exactly: :func:`equivalent_input_shift` returns
the ``d`` with ``f((W + cW) a + b + cb) == f(W (a + d) + b)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, SingularityError
from .objectives import cross_entropy

MAX_CONDITION = 1e8


@dataclass(frozen=True)
class StabilityProbe:
    delta: float = 0.01
    direction_count: int = 64
    radius_grid: tuple[float, ...] = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "radius_grid", tuple(float(r) for r in self.radius_grid))
        if self.delta <= 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.direction_count < 1:
            raise ConfigError("direction_count must be >= 1")
        grid = np.asarray(self.radius_grid)
        if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ConfigError(f"radius_grid must be positive and strictly increasing: {self.radius_grid}")


@dataclass
class StabilityReport:
    stability_radius: float
    radius_grid: tuple[float, ...]
    base_loss: float
    # |J(theta) - J(theta + r c)|, shape (len(radius_grid), direction_count)
    deltas: np.ndarray = field(repr=False)

    def stable_at(self, delta: float) -> np.ndarray:
        return np.all(self.deltas < delta, axis=1)


def sample_directions(count: int, dim: int, seed: int) -> np.ndarray:
    """``count`` uniform random unit vectors in R^dim.

    Rows are generated in order from one stream, so the first ``k`` rows
    for a given seed do not depend on ``count``.
    """
    rng = np.random.default_rng([seed, 11])
    g = rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def stability_radius_fn(loss_fn: Callable[[np.ndarray], float], theta, probe: StabilityProbe
                        ) -> StabilityReport:
    """Stability radius of an arbitrary loss over a flat parameter vector."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    base = float(loss_fn(theta))
    dirs = sample_directions(probe.direction_count, theta.size, probe.seed)
    deltas = np.empty((len(probe.radius_grid), probe.direction_count))
    for i, r in enumerate(probe.radius_grid):
        for j, c in enumerate(dirs):
            deltas[i, j] = abs(base - float(loss_fn(theta + r * c)))
    ok = np.all(deltas < probe.delta, axis=1)
    radius = float(np.asarray(probe.radius_grid)[ok].max()) if ok.any() else 0.0
    return StabilityReport(radius, probe.radius_grid, base, deltas)


def dataset_loss(model, dataset, batch_size: int = 4096) -> float:
    total = 0.0
    n = len(dataset)
    with T.no_grad():
        for start in range(0, n, batch_size):
            y = dataset.labels[start:start + batch_size]
            total += cross_entropy(model.forward(dataset.inputs[start:start + batch_size]), y).item() * len(y)
    return total / n


def stability_radius(model, dataset, probe: StabilityProbe) -> StabilityReport:
    """Stability radius of the model's cross-entropy on ``dataset``; parameters are restored."""
    theta0 = model.flat_parameters()

    def loss(theta):
        model.set_flat_parameters(theta)
        return dataset_loss(model, dataset)

    try:
        return stability_radius_fn(loss, theta0, probe)
    finally:
        model.set_flat_parameters(theta0)


def compare_stability(generalizing_model, memorizing_model, dataset, probe: StabilityProbe):
    """Reports for both models under the same probe (same directions when sizes match)."""
    return (stability_radius(generalizing_model, dataset, probe),
            stability_radius(memorizing_model, dataset, probe))


def write_stability_csv(report: StabilityReport, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radius", "direction", "loss_delta"])
        for i, r in enumerate(report.radius_grid):
            for j, d in enumerate(report.deltas[i]):
                w.writerow([f"{r:.9g}", j, f"{d:.9g}"])


# -- single-layer change of variables ------------------------------------------

_ACTIVATIONS = {
    "identity": (lambda z: z, lambda y: y),
    "tanh": (np.tanh, np.arctanh),
}


def single_layer_output(weight, bias, activation: str, a) -> np.ndarray:
    f, _ = _ACTIVATIONS[activation]
    return f(np.asarray(weight) @ np.asarray(a) + np.asarray(bias))


def single_layer_loss(weight, bias, activation: str, a, label: int) -> float:
    """Cross-entropy of the layer output treated as logits for one sample."""
    out = single_layer_output(weight, bias, activation, a)
    return cross_entropy(out[None, :], np.array([label])).item()


def equivalent_input_shift(weight, bias, activation: str, weight_shift, bias_shift, a) -> np.ndarray:
    """Input shift ``d`` reproducing the effect of shifting the layer's parameters.

    Targets ``Y = f((W + cW) a + b + cb)`` and inverts the unshifted layer:
    ``a + d = W^-1 (f^-1(Y) - b)``.  ``W`` must be square with condition
    number below 1e8; ``activation`` is ``"identity"`` or ``"tanh"``.
    """
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"activation must be invertible (identity or tanh), got {activation!r}")
    W = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    cW = np.zeros_like(W) if weight_shift is None else np.asarray(weight_shift, dtype=np.float64)
    cb = np.zeros_like(b) if bias_shift is None else np.asarray(bias_shift, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"weight must be square, got {W.shape}")
    if cW.shape != W.shape or cb.shape != b.shape or a.shape != (W.shape[1],) or b.shape != (W.shape[0],):
        raise DimensionError("weight/bias shifts and input must match the layer shapes")
    cond = np.linalg.cond(W)
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise SingularityError(f"weight matrix condition number {cond:.3g} is too large")
    if not cW.any() and not cb.any():
        return np.zeros_like(a)
    f, f_inv = _ACTIVATIONS[activation]
    target = f((W + cW) @ a + b + cb)
    a_new = np.linalg.solve(W, f_inv(target) - b)
    return a_new - a
