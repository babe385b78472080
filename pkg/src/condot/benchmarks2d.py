"""Two-dimensional benchmark targets and slab estimates of their conditionals.

Raw samples live in ``[-4, 4]^2`` (anything outside is redrawn) and are
divided by 4.  The first coordinate is the conditioning variable ``y``
and the second is the parameter ``u``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .measures import paired_samples

BOX = 4.0
FAMILIES = ("pinwheel", "two_moons", "checkerboard", "swiss_roll", "uniform")

DEFAULT_PARAMS = {
    "pinwheel": {"radial_std": 0.3, "tangential_std": 0.1, "num_classes": 5, "rate": 0.25},
    "two_moons": {"noise": 0.1},
    "checkerboard": {},
    "swiss_roll": {"noise": 1.0},
    "uniform": {},
}


class LowAcceptanceError(RuntimeError):
    """Slab rejection sampling stalled; ``partial`` holds what was collected."""

    def __init__(self, msg, partial, rate):
        super().__init__(msg)
        self.partial = partial
        self.rate = rate


@dataclass(frozen=True)
class Benchmark2D:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown benchmark family {self.name!r}; choose from {FAMILIES}")
        merged = dict(DEFAULT_PARAMS[self.name])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)

    @property
    def scale(self) -> float:
        """Raw coordinates are divided by this to land in [-1, 1]^2."""
        return BOX


def _pinwheel(rng, n, radial_std, tangential_std, num_classes, rate):
    num_classes = int(num_classes)
    rads = np.linspace(0, 2 * np.pi, num_classes, endpoint=False)
    feats = rng.standard_normal((n, 2)) * np.array([radial_std, tangential_std])
    feats[:, 0] += 1.0
    labels = rng.integers(0, num_classes, n)
    angles = rads[labels] + rate * np.exp(feats[:, 0])
    c, s = np.cos(angles), np.sin(angles)
    x = feats[:, 0] * c - feats[:, 1] * s
    y = feats[:, 0] * s + feats[:, 1] * c
    return 2.0 * np.column_stack([x, y])


def _two_moons(rng, n, noise):
    outer = rng.random(n) < 0.5
    t = np.pi * rng.random(n)
    x = np.where(outer, np.cos(t), 1.0 - np.cos(t))
    y = np.where(outer, np.sin(t), 0.5 - np.sin(t))
    pts = np.column_stack([x, y]) + noise * rng.standard_normal((n, 2))
    return 2.0 * pts + np.array([-1.0, -0.2])


def _checkerboard(rng, n):
    x1 = 4.0 * rng.random(n) - 2.0
    x2 = rng.random(n) - 2.0 * rng.integers(0, 2, n) + np.floor(x1) % 2
    return 2.0 * np.column_stack([x1, x2])


def _swiss_roll(rng, n, noise):
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    pts = np.column_stack([t * np.cos(t), t * np.sin(t)]) + noise * rng.standard_normal((n, 2))
    return pts / 5.0


def _uniform(rng, n):
    return BOX * (2.0 * rng.random((n, 2)) - 1.0)


_GENERATORS = {
    "pinwheel": _pinwheel,
    "two_moons": _two_moons,
    "checkerboard": _checkerboard,
    "swiss_roll": _swiss_roll,
    "uniform": _uniform,
}


def _raw_draw(b: Benchmark2D, rng, n):
    """``n`` raw samples inside the box, redrawing any that fall outside."""
    gen = _GENERATORS[b.name]
    out = np.empty((0, 2))
    while out.shape[0] < n:
        need = n - out.shape[0]
        batch = gen(rng, max(need, 64), **b.params)
        batch = batch[np.all(np.abs(batch) <= BOX, axis=1)]
        out = np.vstack([out, batch[:need]])
    return out


def sample_benchmark(b: Benchmark2D, n: int = 20000, seed=0, paired: bool = False):
    """``n`` normalized draws as ``(Y, U)`` column arrays, or PairedSample list if ``paired``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = _raw_draw(b, rng, n) / b.scale
    Y, U = pts[:, :1].copy(), pts[:, 1:].copy()
    if paired:
        return paired_samples(Y, U)
    return Y, U


def conditional_truth_slab(b: Benchmark2D, y0: float, delta: float = 0.05, n_keep: int = 5000,
                           seed=0, *, batch: int = 200000, min_rate: float = 1e-5,
                           max_draws: int = 50_000_000) -> np.ndarray:
    """u-values of draws with ``|y - y0| <= delta``, by rejection."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kept = []
    n_have = 0
    drawn = 0
    while n_have < n_keep:
        pts = _raw_draw(b, rng, batch) / b.scale
        drawn += batch
        hit = pts[np.abs(pts[:, 0] - y0) <= delta, 1]
        kept.append(hit)
        n_have += hit.size
        rate = n_have / drawn
        if (drawn >= 1_000_000 and rate < min_rate) or (drawn >= max_draws and n_have < n_keep):
            partial = np.concatenate(kept)[:n_keep]
            raise LowAcceptanceError(
                f"slab at y0={y0} accepts {rate:.2e} of draws ({n_have} of {n_keep} after {drawn})",
                partial, rate)
    return np.concatenate(kept)[:n_keep]


def slab_acceptance(b: Benchmark2D, y0: float, delta: float = 0.05, n: int = 200000,
                    seed=0) -> float:
    Y, _ = sample_benchmark(b, n, seed)
    return float(np.mean(np.abs(Y[:, 0] - y0) <= delta))


def write_column_csv(path, name: str, values, comments=()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([name])
        for v in np.asarray(values, dtype=np.float64).ravel():
            w.writerow([repr(float(v))])
