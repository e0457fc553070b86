"""Attractor basin geometry: analytic ratios, Monte-Carlo descent, Brunn-Minkowski.

The synthetic landscape has two flat-bottomed wells.  Along each axis a
well is trapezoidal: flat over a width ``s`` around its centre, then a
linear wall of extent ``m_slope`` on each side, then a constant plateau.
Axes are combined with a max (L-infinity composition), so every basin is
an axis-aligned box of side ``s + 2 * m_slope`` and basin volumes multiply
across dimensions.  All ratios are carried as logarithms since e.g.
``(2/3) ** 1000`` is close to the float64 floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class LogValue:
    log: float

    @property
    def value(self) -> float | None:
        """``exp(log)`` when representable as a normal float64, else None."""
        if self.log < math.log(np.finfo(np.float64).tiny) or self.log > math.log(np.finfo(np.float64).max):
            return None
        return math.exp(self.log)


@dataclass(frozen=True)
class BasinSpec:
    n: int
    s_a: float
    s_b: float
    m_slope: float = 1.0
    separation: float | None = None
    slope_magnitude: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.n}")
        if self.s_a < 0 or self.s_b < 0 or self.m_slope < 0 or self.slope_magnitude <= 0:
            raise ConfigError("widths must be nonnegative and the slope positive")

    @property
    def width_a(self) -> float:
        return self.s_a + 2 * self.m_slope

    @property
    def width_b(self) -> float:
        return self.s_b + 2 * self.m_slope

    @property
    def axis_offset(self) -> float:
        """Per-axis distance between the two centres (centres lie on the diagonal)."""
        if self.separation is None:
            return (self.width_a + self.width_b) / 2
        return self.separation / math.sqrt(self.n)


def analytic_basin_ratio(spec: BasinSpec) -> LogValue:
    """Volume of basin a over basin b: ``((s_a + 2m) / (s_b + 2m)) ** n``."""
    return LogValue(spec.n * (math.log(spec.width_a) - math.log(spec.width_b)))


def stable_fraction(spec: BasinSpec) -> LogValue:
    """Share of basin b occupied by its flat core: ``(s_b / (s_b + 2m)) ** n``."""
    if spec.s_b == 0:
        return LogValue(-math.inf)
    return LogValue(spec.n * (math.log(spec.s_b) - math.log(spec.width_b)))


class TwoWellLandscape:
    def __init__(self, spec: BasinSpec):
        self.spec = spec
        self.center_a = np.zeros(spec.n)
        self.center_b = np.full(spec.n, spec.axis_offset)
        self.plateau = spec.slope_magnitude * spec.m_slope

    def _excess(self, x: np.ndarray, center: np.ndarray, s: float) -> np.ndarray:
        return np.abs(x - center) - s / 2

    def _well(self, x, center, s):
        t = self._excess(x, center, s).max(axis=-1)
        return self.spec.slope_magnitude * np.clip(t, 0.0, self.spec.m_slope)

    def loss(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.minimum(self._well(x, self.center_a, self.spec.s_a),
                          self._well(x, self.center_b, self.spec.s_b))

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the active well; zero on flat cores and on the plateau."""
        x = np.atleast_2d(x)
        use_a = self._well(x, self.center_a, self.spec.s_a) <= self._well(x, self.center_b, self.spec.s_b)
        center = np.where(use_a[:, None], self.center_a, self.center_b)
        s = np.where(use_a, self.spec.s_a, self.spec.s_b)[:, None]
        t = np.abs(x - center) - s / 2
        axis = np.argmax(t, axis=1)
        rows = np.arange(x.shape[0])
        t_max = t[rows, axis]
        on_wall = (t_max > 0) & (t_max < self.spec.m_slope)
        grad = np.zeros_like(x)
        grad[rows, axis] = np.where(on_wall, self.spec.slope_magnitude * np.sign(x[rows, axis] - center[rows, axis]), 0.0)
        return grad

    def in_basin(self, x: np.ndarray) -> np.ndarray:
        return self.loss(x) < self.plateau

    def classify(self, x: np.ndarray) -> np.ndarray:
        """0 = flat core of a, 1 = flat core of b, 2 = neither."""
        x = np.atleast_2d(x)
        in_a = np.all(self._excess(x, self.center_a, self.spec.s_a) <= 0, axis=1)
        in_b = np.all(self._excess(x, self.center_b, self.spec.s_b) <= 0, axis=1)
        return np.where(in_a, 0, np.where(in_b, 1, 2))


@dataclass
class BasinEstimate:
    fraction_a: float
    fraction_b: float
    fraction_neither: float
    samples: int
    stderr_a: float
    stderr_b: float

    @property
    def ratio(self) -> float:
        return self.fraction_a / self.fraction_b if self.fraction_b else math.inf


def monte_carlo_basin(spec: BasinSpec, samples: int = 100_000, lr: float = 0.1,
                      max_steps: int | None = None, seed: int = 0,
                      initial_points: np.ndarray | None = None) -> BasinEstimate:
    """Run gradient descent from uniform starts in the union of both basins.

    Starts are drawn uniformly from the bounding box of the two basins and
    kept only where the landscape lies below its plateau.  Each start
    descends with ``x <- x - lr * subgradient(x)`` until it stops moving or
    ``max_steps`` is hit; end points off both flat cores count as neither.
    """
    if lr * spec.slope_magnitude >= min(spec.s_a, spec.s_b):
        raise ConfigError("lr * slope_magnitude must be below both flat widths for descent to settle")
    if spec.axis_offset < (spec.width_a + spec.width_b) / 2:
        raise ConfigError("basins overlap; increase separation")
    land = TwoWellLandscape(spec)
    if max_steps is None:
        max_steps = 2 * spec.n * (int(math.ceil(spec.m_slope / (lr * spec.slope_magnitude))) + 1)

    if initial_points is not None:
        x = np.array(initial_points, dtype=np.float64).reshape(-1, spec.n)
    else:
        rng = np.random.default_rng([seed, 3])
        lo = -spec.width_a / 2
        hi = spec.axis_offset + spec.width_b / 2
        kept, have = [], 0
        while have < samples:
            cand = rng.uniform(lo, hi, size=(max(4096, 2 * (samples - have)), spec.n))
            cand = cand[land.in_basin(cand)]
            kept.append(cand)
            have += len(cand)
        x = np.concatenate(kept)[:samples]

    active = np.ones(len(x), dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        g = land.subgradient(x[active])
        moving = np.any(g != 0, axis=1)
        idx = np.flatnonzero(active)
        x[idx[moving]] -= lr * g[moving]
        active[idx[~moving]] = False

    labels = land.classify(x)
    labels[active] = 2
    total = len(x)
    fa = float(np.mean(labels == 0))
    fb = float(np.mean(labels == 1))
    return BasinEstimate(fa, fb, float(np.mean(labels == 2)), total,
                         math.sqrt(fa * (1 - fa) / total), math.sqrt(fb * (1 - fb) / total))


# -- Brunn-Minkowski --------------------------------------------------------------

@dataclass(frozen=True)
class SetSpec:
    """Axis box ``[0, sides_i]`` or ball of ``radius`` centred at the origin."""

    kind: str
    n: int
    sides: tuple[float, ...] = ()
    radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sides", tuple(float(s) for s in self.sides))
        if self.kind == "axis_box":
            if len(self.sides) != self.n or any(s <= 0 for s in self.sides):
                raise ConfigError(f"box needs {self.n} positive sides, got {self.sides}")
        elif self.kind == "ball":
            if self.radius <= 0:
                raise ConfigError(f"ball radius must be positive, got {self.radius}")
        else:
            raise ConfigError(f"unknown set kind {self.kind!r}")

    @classmethod
    def box(cls, *sides: float) -> "SetSpec":
        return cls("axis_box", len(sides), sides)

    @classmethod
    def ball(cls, radius: float, n: int) -> "SetSpec":
        return cls("ball", n, radius=radius)

    def log_volume(self) -> float:
        if self.kind == "axis_box":
            return float(np.sum(np.log(self.sides)))
        n = self.n
        return n / 2 * math.log(math.pi) - math.lgamma(n / 2 + 1) + n * math.log(self.radius)


@dataclass
class BrunnMinkowskiResult:
    lhs: float  # mu(A + B) ** (1/n)
    rhs: float  # mu(A) ** (1/n) + mu(B) ** (1/n)
    stderr: float
    holds: bool
    strict: bool
    method: str


def _sum_bounds(A: SetSpec, B: SetSpec) -> tuple[np.ndarray, np.ndarray]:
    def bounds(s):
        if s.kind == "axis_box":
            return np.zeros(s.n), np.array(s.sides)
        return np.full(s.n, -s.radius), np.full(s.n, s.radius)
    la, ha = bounds(A)
    lb, hb = bounds(B)
    return la + lb, ha + hb


def _in_sum(x: np.ndarray, A: SetSpec, B: SetSpec) -> np.ndarray:
    if A.kind == "axis_box" and B.kind == "axis_box":
        hi = np.array(A.sides) + np.array(B.sides)
        return np.all((x >= 0) & (x <= hi), axis=1)
    if A.kind == "ball" and B.kind == "ball":
        return np.linalg.norm(x, axis=1) <= A.radius + B.radius
    box, ball = (A, B) if A.kind == "axis_box" else (B, A)
    nearest = np.clip(x, 0.0, np.array(box.sides))
    return np.linalg.norm(x - nearest, axis=1) <= ball.radius


def brunn_minkowski_check(A: SetSpec, B: SetSpec, samples: int = 200_000, seed: int = 0,
                          method: str = "auto") -> BrunnMinkowskiResult:
    """Both sides of ``mu(A+B)^(1/n) >= mu(A)^(1/n) + mu(B)^(1/n)`` and the verdict.

    ``method="auto"`` uses closed forms for box+box and ball+ball and Monte
    Carlo for mixed pairs; ``"mc"`` forces Monte Carlo.  The verdict allows
    three standard errors of Monte-Carlo slack.
    """
    if A.n != B.n:
        raise DimensionError(f"sets live in different dimensions: {A.n} vs {B.n}")
    n = A.n
    rhs = math.exp(A.log_volume() / n) + math.exp(B.log_volume() / n)
    same = A.kind == B.kind
    if method == "auto" and same:
        if A.kind == "axis_box":
            log_sum = float(np.sum(np.log(np.array(A.sides) + np.array(B.sides))))
        else:
            log_sum = SetSpec.ball(A.radius + B.radius, n).log_volume()
        lhs, stderr, used = math.exp(log_sum / n), 0.0, "analytic"
    elif method in ("auto", "mc"):
        lo, hi = _sum_bounds(A, B)
        pad = 0.25 * (hi - lo)
        lo, hi = lo - pad, hi + pad
        box_vol = float(np.prod(hi - lo))
        rng = np.random.default_rng([seed, 5])
        hits = 0
        for start in range(0, samples, 65536):
            m = min(65536, samples - start)
            hits += int(_in_sum(rng.uniform(lo, hi, size=(m, n)), A, B).sum())
        p = hits / samples
        vol = box_vol * p
        vol_se = box_vol * math.sqrt(p * (1 - p) / samples)
        lhs = vol ** (1 / n)
        stderr = (vol ** (1 / n - 1) / n) * vol_se if vol > 0 else math.inf
        used = "mc"
    else:
        raise ConfigError(f"unknown method {method!r}")
    tol = 3 * stderr + 1e-12 * max(1.0, rhs)
    return BrunnMinkowskiResult(lhs, rhs, stderr, lhs + tol >= rhs, lhs - 3 * stderr > rhs + 1e-12 * max(1.0, rhs), used)


# -- gradient-norm traces ------------------------------------------------------------

@dataclass
class TraceSummary:
    peak_epoch: int
    peak_value: float
    final_value: float


@dataclass
class TraceComparison:
    standard: TraceSummary
    split: TraceSummary
    peak_standard_higher: bool
    final_standard_lower: bool
    tie: bool
    truncated: bool


def _summarize(epochs, norms) -> TraceSummary:
    i = int(np.argmax(norms))
    return TraceSummary(int(epochs[i]), float(norms[i]), float(norms[-1]))


def grad_norm_trace_compare(record_standard, record_split) -> TraceComparison:
    """Compare first-layer gradient-norm traces over their common epoch prefix."""
    e_std = record_standard.column("epoch")
    e_split = record_split.column("epoch")
    n = min(len(e_std), len(e_split))
    if n == 0:
        raise ConfigError("both records need at least one epoch")
    truncated = len(e_std) != len(e_split)
    g_std = record_standard.column("first_layer_grad_norm")[:n]
    g_split = record_split.column("first_layer_grad_norm")[:n]
    a, b = _summarize(e_std[:n], g_std), _summarize(e_split[:n], g_split)
    tie = list(g_std) == list(g_split)
    return TraceComparison(a, b, a.peak_value > b.peak_value, a.final_value < b.final_value,
                           tie, truncated)
