"""Catalog models and samplers: exactness, seeding, windows, path plumbing."""

import numpy as np
import pytest

from affineflow.core import Dims, exp_functional
from affineflow.models import (
    Path,
    RealPath,
    make_cir,
    make_heston_like,
    make_levy,
    model_from_spec,
    read_paths_csv,
    sample_grid,
    simulate,
    state_source,
    uniform_times,
    write_paths_csv,
)


def test_uniform_times():
    grid = uniform_times(1.0, 0.25)
    assert np.allclose(grid, [0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        uniform_times(1.0, 0.3)  # horizon off the grid
    with pytest.raises(ValueError):
        uniform_times(0.0, 0.1)
    with pytest.raises(ValueError):
        uniform_times(1.0, -0.1)


def test_catalog_metadata(levy, cir, heston0, heston1, control):
    assert levy.dims == Dims(0, 2) and np.array_equal(levy.beta, np.zeros((2, 2)))
    assert cir.dims == Dims(1, 0) and cir.beta.shape == (0, 0)
    assert np.allclose(heston0.beta, [[0.0]])
    assert np.allclose(heston1.beta, [[-1.0]])
    assert heston1.closed_flow is None and heston0.closed_flow is not None
    assert cir.sampler_kind == "exact"
    assert heston0.sampler_kind.startswith("euler")
    assert control.gen is None and control.beta is None
    assert control.x0_default == pytest.approx([0.7])


def test_factory_validation():
    with pytest.raises(ValueError):
        make_cir(-0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        make_cir(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        make_levy([0.0], [[-1.0]])  # negative "covariance"
    with pytest.raises(ValueError):
        make_levy([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])  # asymmetric
    with pytest.raises(ValueError):
        make_levy([0.0, 0.0], [[1.0]])  # shape mismatch
    with pytest.raises(ValueError):
        make_heston_like(0.4, 0.6, 0.5, 1.5, 0.0)  # |rho| > 1
    with pytest.raises(ValueError):
        make_heston_like(-0.4, 0.6, 0.5, 0.0, 0.0)


def test_model_from_spec():
    model = model_from_spec("cir", {"a": 1.0, "b": 1.0, "sigma": 1.0})
    assert model.name == "cir" and model.params["a"] == 1.0
    assert model_from_spec("nonaffine_control").dims == Dims(0, 1)
    with pytest.raises(ValueError, match="known"):
        model_from_spec("vasicek")


def test_cir_paths_stay_on_halfline(cir):
    times = uniform_times(1.0, 0.1)
    vals = sample_grid(cir, [1.0], times, 10_000, seed=3)
    assert vals.shape == (10_000, 11, 1)
    assert np.min(vals) >= 0.0
    assert np.all(np.isfinite(vals))


def test_seed_determinism(heston0):
    times = uniform_times(0.5, 0.25)
    a = sample_grid(heston0, [0.3, 0.0], times, 16, seed=9)
    b = sample_grid(heston0, [0.3, 0.0], times, 16, seed=9)
    c = sample_grid(heston0, [0.3, 0.0], times, 16, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_chunk_size_never_changes_results(levy):
    times = uniform_times(1.0, 0.5)
    a = sample_grid(levy, [0.0, 0.0], times, 10, seed=4, chunk_size=3)
    b = sample_grid(levy, [0.0, 0.0], times, 10, seed=4, chunk_size=4096)
    assert np.array_equal(a, b)


def test_window_equals_slice_of_full_run(heston0):
    times = uniform_times(0.5, 0.25)
    full = sample_grid(heston0, [0.3, 0.0], times, 24, seed=5)
    win = sample_grid(heston0, [0.3, 0.0], times, 6, seed=5, path_offset=9, total_paths=24)
    assert np.array_equal(win, full[9:15])


def test_window_equals_slice_antithetic(levy):
    times = uniform_times(1.0, 0.25)
    full = sample_grid(levy, [0.0, 0.0], times, 16, seed=5, antithetic=True)
    win = sample_grid(levy, [0.0, 0.0], times, 6, seed=5, antithetic=True,
                      path_offset=5, total_paths=16)
    assert np.array_equal(win, full[5:11])


def test_window_validation(levy):
    times = uniform_times(1.0, 0.5)
    with pytest.raises(ValueError):
        sample_grid(levy, [0.0, 0.0], times, 8, seed=1, path_offset=5, total_paths=10)
    with pytest.raises(ValueError):
        sample_grid(levy, [0.0, 0.0], times, 0, seed=1)
    with pytest.raises(ValueError):
        sample_grid(levy, [0.0, 0.0], [0.0], 4, seed=1)  # need two record times
    with pytest.raises(ValueError):
        sample_grid(levy, [0.0, 0.0], [0.1, 0.5], 4, seed=1)  # must start at 0


def test_antithetic_requires_sampler_support(cir):
    with pytest.raises(ValueError, match="antithetic"):
        sample_grid(cir, [1.0], uniform_times(1.0, 0.5), 4, seed=1, antithetic=True)


def test_antithetic_pairs_average_to_drift(levy):
    """Mirrored Gaussian draws cancel: pair means reproduce x0 + drift*t."""
    times = uniform_times(2.0, 0.5)
    vals = sample_grid(levy, [1.0, -1.0], times, 32, seed=6, antithetic=True)
    pair_mean = 0.5 * (vals[0::2] + vals[1::2])
    drift = np.array(levy.params["drift"])
    expected = np.array([1.0, -1.0]) + times[:, None] * drift
    assert np.max(np.abs(pair_mean - expected)) < 1e-12


def test_zero_covariance_is_pure_drift():
    model = make_levy([0.5, -0.25], [[0.0, 0.0], [0.0, 0.0]])
    times = uniform_times(2.0, 0.5)
    vals = sample_grid(model, [1.0, 2.0], times, 5, seed=0)
    expected = np.array([1.0, 2.0]) + times[:, None] * np.array([0.5, -0.25])
    assert np.max(np.abs(vals - expected)) < 1e-12


def test_simulate_returns_state_paths(heston0):
    paths = simulate(heston0, [0.3, 0.0], 1.0, 0.25, 3, seed=2)
    assert len(paths) == 3
    for p in paths:
        assert isinstance(p, Path)
        assert p.times[0] == 0.0 and p.d == 2
        assert np.min(p.values[:, 0]) >= 0.0


def test_path_value_lookup():
    p = RealPath([0.0, 1.0, 2.0], [[0.0], [10.0], [20.0]])
    assert p.value_at(0.0) == pytest.approx([0.0])
    assert p.value_at(1.5) == pytest.approx([10.0])  # cadlag: left value
    assert p.value_at(2.0) == pytest.approx([20.0])
    assert p.value_at(5.0) == pytest.approx([20.0])
    with pytest.raises(ValueError):
        p.value_at(-0.5)


def test_path_validation():
    with pytest.raises(ValueError):
        RealPath([0.5, 1.0], [[0.0], [1.0]])  # must start at 0
    with pytest.raises(ValueError):
        RealPath([0.0, 0.0], [[0.0], [1.0]])  # strictly increasing
    with pytest.raises(ValueError):
        RealPath([0.0, 1.0], [[0.0]])  # length mismatch
    with pytest.raises(ValueError):
        Path([0.0, 1.0], [[1.0], [-0.5]], Dims(1, 0))  # cone violation
    with pytest.raises(ValueError):
        Path([0.0, 1.0], [[1.0], [0.5]], Dims(1, 1))  # wrong width


def test_paths_csv_roundtrip(tmp_path, heston0):
    paths = simulate(heston0, [0.3, 0.0], 1.0, 0.25, 3, seed=8)
    target = tmp_path / "paths.csv"
    write_paths_csv(paths, target)
    back = read_paths_csv(target, dims=heston0.dims)
    assert len(back) == 3
    for orig, read in zip(paths, back):
        assert isinstance(read, Path)
        assert np.array_equal(orig.times, read.times)
        assert np.array_equal(orig.values, read.values)  # repr round-trips floats


def test_paths_csv_transformed_marker(tmp_path):
    p = RealPath([0.0, 1.0], [[0.0], [1.0]])
    target = tmp_path / "z.csv"
    write_paths_csv([p], target, transformed=True)
    first = target.read_text().splitlines()[0]
    assert first == "# frame=transformed"
    back = read_paths_csv(target)
    assert len(back) == 1 and isinstance(back[0], RealPath)
    with pytest.raises(ValueError):
        write_paths_csv([], tmp_path / "none.csv")


def test_state_source_adapter(levy):
    src = state_source(levy)
    times = uniform_times(1.0, 0.5)
    direct = sample_grid(levy, [0.0, 0.0], times, 4, seed=12)
    assert np.array_equal(src([0.0, 0.0], times, 4, 12), direct)


def _ecf_z(model, x0, t, u, n, seed):
    """z-score of the empirical CF of X_t against the closed-form flow."""
    vals = sample_grid(model, x0, [0.0, t], n, seed=seed)
    samples = np.exp(vals[:, 1, :] @ np.asarray(u))
    ecf = np.mean(samples)
    stderr = np.std(samples) / np.sqrt(n)
    ev = model.closed_flow(t, np.asarray(u))
    target = ev.phi * exp_functional(ev.psi, x0)
    return abs(ecf - target) / stderr


def test_cir_sampler_matches_flow(cir):
    z = _ecf_z(cir, [1.0], 0.5, [-1.0 + 0.0j], 40_000, seed=11)
    assert z < 4.0


def test_heston_sampler_matches_flow(heston0):
    z = _ecf_z(heston0, [0.3, 0.0], 0.4, [-0.5 + 0.2j, 0.3j], 20_000, seed=11)
    assert z < 4.5
