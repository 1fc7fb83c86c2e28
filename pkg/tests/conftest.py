import numpy as np
import pytest

from girl import autodiff as ad


def max_rel_err(analytic, numeric, floor=1e-10):
    """Worst-case norm-relative error between gradient dicts, per tensor."""
    worst = 0.0
    for k in numeric:
        a, n = analytic[k], numeric[k]
        denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def check_gradients(make_loss, params, draws=10, seed=0, tol=1e-6,
                    reinit=None):
    """FD-check make_loss() against backward() over several random draws.

    make_loss must return a scalar Tensor built from `params`; reinit(rng)
    is called before each draw to randomize parameters and inputs.
    """
    rng = np.random.default_rng(seed)
    for _ in range(draws):
        if reinit is not None:
            reinit(rng)
        params.zero_grad()
        make_loss().backward()
        analytic = {k: params[k].grad.copy() for k in params}
        numeric = ad.finite_difference_grad(
            lambda: float(make_loss().data), params)
        err = max_rel_err(analytic, numeric)
        assert err < tol, f"gradient mismatch: rel err {err:.3e}"


def randomize(params, rng, scale=0.3):
    for k in params:
        params[k].data = rng.normal(0.0, scale, size=params[k].data.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
