"""Shared test helpers: finite-difference oracles and deterministic hypothesis."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def central_diff_grad(f, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. arr, mutated in place."""
    g = np.zeros_like(arr, dtype=np.float64)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + eps
        f1 = float(f())
        arr[idx] = orig - eps
        f2 = float(f())
        arr[idx] = orig
        g[idx] = (f1 - f2) / (2.0 * eps)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grads_fd(build_loss, named_tensors, tol: float, eps: float = 1e-5,
                   sample: int | None = None, rng: np.random.Generator | None = None):
    """Compare autodiff grads of build_loss() against central differences.

    With `sample`, only that many coordinates per tensor are checked
    (deterministically chosen via rng). Returns the worst relative error.
    """
    loss = build_loss()
    for _, t in named_tensors:
        t.grad = None
    loss.backward()
    worst = 0.0
    worst_name = None
    for name, t in named_tensors:
        assert t.grad is not None, f"no gradient reached {name}"
        if sample is None or t.data.size <= sample:
            idxs = list(np.ndindex(t.data.shape))
        else:
            flat = rng.choice(t.data.size, size=sample, replace=False)
            idxs = [np.unravel_index(i, t.data.shape) for i in sorted(flat)]
        for idx in idxs:
            orig = t.data[idx]
            t.data[idx] = orig + eps
            f1 = float(build_loss().item())
            t.data[idx] = orig - eps
            f2 = float(build_loss().item())
            t.data[idx] = orig
            gfd = (f1 - f2) / (2.0 * eps)
            gan = float(t.grad[idx])
            denom = max(abs(gan), abs(gfd), 1e-6)
            rel = abs(gan - gfd) / denom
            if rel > worst:
                worst = rel
                worst_name = f"{name}{list(idx)}"
    assert worst < tol, f"worst rel err {worst:.3e} at {worst_name} (tol {tol})"
    return worst


@pytest.fixture(scope="session")
def rng_factory():
    def make(seed: int) -> np.random.Generator:
        return np.random.default_rng(seed)

    return make
