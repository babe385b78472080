"""Distances and summary statistics for comparing sample sets and fields."""

from __future__ import annotations

import csv
import math
from typing import Callable, Sequence

import numpy as np


def wasserstein1_1d(a, b) -> float:
    """W1 between two empirical measures on the line (uniform weights)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("W1 needs two nonempty samples")
    if a.size == b.size:
        return math.fsum(np.abs(a - b)) / a.size
    # integrate |F_a^{-1} - F_b^{-1}| over the merged quantile grid
    qa = np.arange(1, a.size + 1) / a.size
    qb = np.arange(1, b.size + 1) / b.size
    grid = np.union1d(qa, qb)
    widths = np.diff(np.concatenate([[0.0], grid]))
    mids = grid - 0.5 * widths
    ia = np.minimum(np.floor(mids * a.size).astype(np.int64), a.size - 1)
    ib = np.minimum(np.floor(mids * b.size).astype(np.int64), b.size - 1)
    return math.fsum(widths * np.abs(a[ia] - b[ib]))


def field_l2_error(a, b, relative: bool = False) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("fields differ in length")
    err = math.sqrt(math.fsum((a - b) ** 2))
    if relative:
        nb = math.sqrt(math.fsum(b * b))
        if nb == 0:
            raise ValueError("relative error against a zero field")
        return err / nb
    return err


def variance_scatter(var_a, var_b) -> np.ndarray:
    """Rows ``(var_a[i], var_b[i])``, one per node."""
    var_a = np.asarray(var_a, dtype=np.float64).ravel()
    var_b = np.asarray(var_b, dtype=np.float64).ravel()
    if var_a.shape != var_b.shape:
        raise ValueError("variance fields differ in length")
    return np.column_stack([var_a, var_b])


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else 0.0


def projection_directions(dim: int, n_proj: int = 32, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n_proj, dim))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def sliced_w1(X, Y, n_proj: int = 32, seed: int = 0) -> float:
    """Average 1D W1 over a fixed seeded set of unit directions."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("sample sets differ in dimension")
    D = projection_directions(X.shape[1], n_proj, seed)
    return float(np.mean([wasserstein1_1d(X @ d, Y @ d) for d in D]))


def stability_trend(posterior_sampler_at_modes: Callable[[int, np.ndarray, int], np.ndarray],
                    mode_list: Sequence[int], probe_y, n_samples: int,
                    n_proj: int = 32, seed: int = 0) -> list:
    """Sliced W1 between posterior samples at consecutive mode counts.

    ``posterior_sampler_at_modes(N, y, n)`` must return ``n`` samples in a
    space that does not depend on ``N`` (e.g. fields on a fixed grid).
    """
    modes = list(mode_list)
    if any(b <= a for a, b in zip(modes, modes[1:])):
        raise ValueError("mode_list must be increasing")
    samples = [np.asarray(posterior_sampler_at_modes(N, probe_y, n_samples)) for N in modes]
    return [(N2, sliced_w1(S1, S2, n_proj, seed))
            for N2, S1, S2 in zip(modes[1:], samples, samples[1:])]


def write_rows_csv(path, header, rows, comments=()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
