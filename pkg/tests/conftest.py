import numpy as np
import pytest

from emodyn.types import ClusterParameters, TimeSeries


def rand_psd(d, rng, scale=1.0):
    m = rng.standard_normal((d, d))
    return scale * (m @ m.T + 0.5 * np.eye(d))


def random_model(rng, d_x=2, d_y=2, noise_scale=1.0):
    return ClusterParameters(
        mu=rng.standard_normal(d_x),
        A=0.2 * rng.standard_normal((d_x, d_x)),
        C=rng.standard_normal((d_y, d_x)),
        P=rand_psd(d_x, rng, noise_scale),
        Sigma=rand_psd(d_y, rng, noise_scale),
        Gamma=rand_psd(d_x, rng, noise_scale),
    )


def random_series(rng, T=4, d_y=2, pid="p"):
    t = np.cumsum(rng.uniform(0.2, 2.5, size=T))
    return TimeSeries(pid, t, rng.standard_normal((T, d_y)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
