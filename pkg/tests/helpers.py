"""Data generators shared by several test modules."""
import numpy as np

from ssnanomaly.covariance import SpatialCovParams
from ssnanomaly.model import ModelParams, ObservationSet, simulate_from_model
from ssnanomaly.network import generate_random_network

# one "PASS|FAIL criterion N: ..." line per acceptance test, echoed at the end of the run
ACCEPTANCE_LINES = []


def two_regime_levels(seed, S=5, T=200):
    """White noise with +3 sd pulses shared by every site; returns (Y, event mask)."""
    rng = np.random.default_rng(seed)
    z = np.zeros(T, bool)
    t = 0
    while t < T:
        if rng.random() < 0.04:
            z[t:t + rng.integers(5, 15)] = True
            t += 15
        t += 1
    base = rng.normal(0, 1, (S, T))
    return base + 3.0 * z[None, :] * rng.uniform(0.9, 1.1, (S, 1)), z


def model_data(S, T, seed, phi=0.8, beta=(10.0, 1.0)):
    """Draw from the fitted model itself on a random network."""
    rng = np.random.default_rng(seed)
    net = generate_random_network(3 * S, S, seed=seed)
    x = np.ones((S, T, len(beta)))
    x[:, :, 1:] = rng.normal(size=(S, T, len(beta) - 1))
    theta = ModelParams(np.array(beta, dtype=float),
                        SpatialCovParams(sigma2_d=3.0, alpha_d=10.0, sigma2_0=0.1), np.full(S, phi))
    y = simulate_from_model(net, theta, x, seed=seed)
    return ObservationSet(y, x, tuple(net.site_ids)), net


def event_levels(seed, S=6, T=300, amp=2.0, phi=0.5):
    """Level series with AR(1) noise and catchment-wide events.

    Events start with probability 0.03 per tick, last 5 to 20 ticks and
    raise every site by ``amp`` times a site gain in [0.6, 1.4] noise sd.
    Returns ``(Y (S, T), event mask (T,))``.
    """
    rng = np.random.default_rng(seed)
    z = np.zeros(T, bool)
    t = 0
    while t < T:
        if rng.random() < 0.03:
            n = int(rng.integers(5, 21))
            z[t:t + n] = True
            t += n + 10
        t += 1
    e = rng.normal(0, np.sqrt(1 - phi ** 2), (S, T))
    base = np.zeros((S, T))
    base[:, 0] = rng.normal(size=S)
    for k in range(1, T):
        base[:, k] = phi * base[:, k - 1] + e[:, k]
    gain = rng.uniform(0.6, 1.4, (S, 1))
    return rng.uniform(5, 15, (S, 1)) + base + amp * gain * z[None, :], z
