"""Empirical measures on product spaces Y x U and the paired reference construction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

Sampler = Callable[[np.random.Generator, int], np.ndarray]


class MeasureError(ValueError):
    """Invalid points or weights for an empirical measure."""


def _as_point(x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1:
        raise MeasureError(f"a point must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MeasureError("point coordinates must be finite")
    return arr


@dataclass(frozen=True)
class PairedSample:
    """One joint draw: conditioning coordinate ``y`` and parameter ``u``."""

    y: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _as_point(self.y))
        object.__setattr__(self, "u", _as_point(self.u))


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud.

    ``points`` has shape ``(J, d)``.  When the measure lives on a product
    space, the first ``y_dim`` coordinates are the conditioning block.
    """

    points: np.ndarray
    weights: np.ndarray
    y_dim: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        w = np.array(self.weights, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise MeasureError("points must be a nonempty (J, d) array")
        if not np.all(np.isfinite(pts)):
            raise MeasureError("point coordinates must be finite")
        if w.shape != (pts.shape[0],):
            raise MeasureError("weights must have one entry per point")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise MeasureError("weights must be finite and nonnegative")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise MeasureError("weights must sum to one")
        if not 0 <= self.y_dim <= pts.shape[1]:
            raise MeasureError("y_dim out of range")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, : self.y_dim]

    @property
    def x(self) -> np.ndarray:
        """The non-conditioning block (v for a reference, u for a target)."""
        return self.points[:, self.y_dim :]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


def make_empirical(points, weights=None, y_dim: int = 0) -> EmpiricalMeasure:
    """Build an empirical measure, defaulting to uniform weights and normalizing."""
    if isinstance(points, np.ndarray):
        pts = np.array(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
    else:
        rows = [_as_point(p) for p in points]
        if not rows:
            raise MeasureError("cannot build a measure from zero points")
        if len({r.shape[0] for r in rows}) != 1:
            raise MeasureError("all points must have the same dimension")
        pts = np.vstack(rows)
    if pts.shape[0] == 0:
        raise MeasureError("cannot build a measure from zero points")
    n = pts.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape[0] != n:
            raise MeasureError(f"got {w.shape[0]} weights for {n} points")
        if np.any(w < 0):
            raise MeasureError("weights must be nonnegative")
        total = math.fsum(w)
        if not total > 0:
            raise MeasureError("weights must not all be zero")
        w = w / total
    return EmpiricalMeasure(pts, w, y_dim=y_dim)


def as_arrays(targets) -> tuple[np.ndarray, np.ndarray]:
    """Coerce a list of PairedSample, or a ``(Y, U)`` pair of arrays, into 2-d arrays."""
    if isinstance(targets, tuple) and len(targets) == 2 and isinstance(targets[0], np.ndarray):
        Y = np.asarray(targets[0], dtype=np.float64)
        U = np.asarray(targets[1], dtype=np.float64)
        Y = Y[:, None] if Y.ndim == 1 else Y
        U = U[:, None] if U.ndim == 1 else U
    else:
        targets = list(targets)
        if not targets:
            raise MeasureError("no target samples")
        Y = np.vstack([t.y for t in targets])
        U = np.vstack([t.u for t in targets])
    if Y.shape[0] == 0 or Y.shape[0] != U.shape[0]:
        raise MeasureError("targets must be a nonempty set of (y, u) pairs")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(U))):
        raise MeasureError("target coordinates must be finite")
    return Y, U


def pair_reference(targets, ref_sampler: Sampler, seed: int):
    """Return ``(eta, nu)`` sharing the targets' y-atoms bitwise, in order.

    The reference's v-block is drawn i.i.d. from ``ref_sampler(rng, J)``.
    """
    Y, U = as_arrays(targets)
    J = Y.shape[0]
    rng = np.random.default_rng(seed)
    V = np.asarray(ref_sampler(rng, J), dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape != U.shape:
        raise MeasureError(
            f"reference sampler produced shape {V.shape}, expected {U.shape} to match u"
        )
    d = Y.shape[1]
    eta = make_empirical(np.hstack([Y, V]), y_dim=d)
    nu = make_empirical(np.hstack([Y, U]), y_dim=d)
    return eta, nu


def second_moment(m: EmpiricalMeasure) -> float:
    return math.fsum(m.weights * np.einsum("ij,ij->i", m.points, m.points))


def gaussian_sampler(dim: int, scale: float = 1.0) -> Sampler:
    """Reference sampler drawing N(0, scale^2 I) in ``dim`` dimensions."""

    def draw(rng, n):
        return scale * rng.standard_normal((n, dim))

    return draw


def write_samples_csv(path, Y, U, comments: Iterable[str] = ()) -> None:
    """Write paired samples with a ``y1..yd,u1..um`` header.

    Comment lines (prefixed ``#``) go first so provenance travels with the data.
    """
    Y = np.asarray(Y, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    Y = Y[:, None] if Y.ndim == 1 else Y
    U = U[:, None] if U.ndim == 1 else U
    header = [f"y{i + 1}" for i in range(Y.shape[1])] + [f"u{i + 1}" for i in range(U.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.hstack([Y, U]):
            w.writerow([repr(float(x)) for x in row])


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_samples_csv`; splits columns by the y/u header prefix."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    ucols = [i for i, h in enumerate(header) if h.startswith("u")]
    if not ycols or not ucols or len(ycols) + len(ucols) != len(header):
        raise MeasureError(f"{Path(path).name}: header must be y1..yd,u1..um")
    data = np.array([[float(x) for x in row] for row in reader], dtype=np.float64)
    data = data.reshape(-1, len(header))
    return data[:, ycols], data[:, ucols]


def paired_samples(Y: np.ndarray, U: np.ndarray) -> Sequence[PairedSample]:
    return [PairedSample(y, u) for y, u in zip(np.atleast_2d(Y), np.atleast_2d(U))]
