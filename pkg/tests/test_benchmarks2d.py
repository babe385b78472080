import numpy as np
import pytest

from condot.benchmarks2d import (
    FAMILIES,
    Benchmark2D,
    LowAcceptanceError,
    conditional_truth_slab,
    sample_benchmark,
    slab_acceptance,
    write_column_csv,
)
from condot.measures import PairedSample
from condot.metrics import wasserstein1_1d


@pytest.mark.parametrize("name", FAMILIES)
def test_bounded_and_deterministic(name):
    b = Benchmark2D(name)
    Y, U = sample_benchmark(b, 5000, seed=3)
    assert Y.shape == U.shape == (5000, 1)
    assert np.abs(Y).max() <= 1.01 and np.abs(U).max() <= 1.01
    Y2, U2 = sample_benchmark(b, 5000, seed=3)
    assert np.array_equal(Y, Y2) and np.array_equal(U, U2)
    assert np.all(np.isfinite(Y)) and np.all(np.isfinite(U))


def test_default_size_and_paired_form():
    Y, _ = sample_benchmark(Benchmark2D("pinwheel"))
    assert Y.shape[0] == 20000
    pairs = sample_benchmark(Benchmark2D("two_moons"), 3, seed=0, paired=True)
    assert len(pairs) == 3 and isinstance(pairs[0], PairedSample)


def test_unknown_family():
    with pytest.raises(ValueError):
        Benchmark2D("spirals")


def test_uniform_slab_is_uniform():
    u = conditional_truth_slab(Benchmark2D("uniform"), 0.2, 0.05, 10000, seed=1)
    exact = np.linspace(-1, 1, 2 * u.size + 1)[1::2]
    assert wasserstein1_1d(u, exact) <= 0.02


def test_product_target_slab_independent_of_y0():
    b = Benchmark2D("uniform")
    a = conditional_truth_slab(b, -0.6, 0.05, 5000, seed=2)
    c = conditional_truth_slab(b, 0.7, 0.05, 5000, seed=3)
    assert wasserstein1_1d(a, c) <= 0.05


def test_slab_refinement_converges():
    b = Benchmark2D("two_moons")
    coarse = conditional_truth_slab(b, 0.0, 0.1, 20000, seed=4)
    fine = conditional_truth_slab(b, 0.0, 0.05, 20000, seed=5)
    finer = conditional_truth_slab(b, 0.0, 0.025, 20000, seed=6)
    assert wasserstein1_1d(fine, finer) <= 0.03
    assert wasserstein1_1d(coarse, finer) <= 0.05


def test_empty_slab_reports_partial():
    with pytest.raises(LowAcceptanceError) as err:
        conditional_truth_slab(Benchmark2D("uniform"), 3.0, 0.05, 10, seed=0, batch=100000)
    assert err.value.partial.size == 0 and err.value.rate == 0.0
    with pytest.raises(ValueError):
        conditional_truth_slab(Benchmark2D("uniform"), 0.0, 0.0, 10)


def test_acceptance_rate():
    rate = slab_acceptance(Benchmark2D("uniform"), 0.0, 0.05, n=100000)
    assert abs(rate - 0.05) < 0.005


def test_column_csv(tmp_path):
    path = tmp_path / "u.csv"
    write_column_csv(path, "u", [0.5, 0.25], comments=["x"])
    assert path.read_text() == "# x\nu\n0.5\n0.25\n"
