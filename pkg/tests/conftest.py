import numpy as np
import pytest

from scos import FilterConfig, TraceMeta, Trace, generate, low_signal_scenario, signal_sweep
from scos.analysis import run_sweep_study

SWEEP_LEVELS = [20, 26, 34, 47, 68, 100, 150, 230, 350, 500]
SWEEP_BASE_SEED = 100
SWEEP_REPEATS = 3


def make_trace(
    n=1200,
    fs=60.0,
    k_base=0.05,
    k_mod=0.005,
    i_base=100.0,
    i_mod=2.0,
    k_freq=1.3,
    i_freq=1.1,
    seed=None,
    noise=0.0,
) -> Trace:
    """Small helper: a sinusoid-modulated trace, optionally with seeded noise."""
    t = np.arange(n) / fs
    k = k_base + k_mod * np.sin(2 * np.pi * k_freq * t)
    inten = i_base + i_mod * np.sin(2 * np.pi * i_freq * t + 0.7)
    if noise:
        rng = np.random.default_rng(seed)
        k = k + noise * k_base * rng.standard_normal(n)
        inten = inten + noise * i_base * rng.standard_normal(n)
    k = np.maximum(k, 1e-9)
    meta = TraceMeta(sampling_rate_hz=fs, duration_s=n / fs, source_label="unit")
    return Trace(meta=meta, t=t, k_raw_sq=k, mean_intensity=inten)


@pytest.fixture(scope="session")
def scenario_50():
    """Low-signal dataset at ~50 e-/px with a 20% gain under-subtraction."""
    return generate(low_signal_scenario(50.0, rng_seed=1))


@pytest.fixture(scope="session")
def scenario_27():
    return generate(low_signal_scenario(27.0, rng_seed=2))


@pytest.fixture(scope="session")
def sweep_datasets():
    datasets = []
    for r in range(SWEEP_REPEATS):
        spec = low_signal_scenario(50.0, rng_seed=SWEEP_BASE_SEED + r)
        datasets += signal_sweep(spec, SWEEP_LEVELS)
    return datasets


@pytest.fixture(scope="session")
def sweep_study(sweep_datasets):
    """Shared 30-dataset sweep study (criteria 5 and 6)."""
    return run_sweep_study(sweep_datasets)


@pytest.fixture
def filter_cfg():
    return FilterConfig()
