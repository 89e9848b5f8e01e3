"""
Shared fixtures for the test suites: small worlds and a finite-difference checker.
"""
import os
import sys

import numpy as np

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from qsalign.clicksim import WorldConfig, curate_triplets, gen_world, simulate_logs


def small_world(seed=0, **overrides):
    """A 30-context world with pool size 6 unless overridden."""
    cfg = dict(n_contexts=30, pool_size=6)
    cfg.update(overrides)
    return gen_world(seed, WorldConfig(**cfg))


def small_triplets(world, n_impressions=3000, seed=1, mode="both"):
    logs = simulate_logs(world, n_impressions, seed)
    triplets, _ = curate_triplets(logs, mode)
    return triplets


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of scalar f at vector x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))
