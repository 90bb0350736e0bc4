"""Independent reference implementations used to cross-check the fast paths.

Nothing in here goes through the tape: every function is a direct numpy
(or plain python) computation, kept deliberately separate from the code it
verifies. Tests and the ``gradcheck``/``oracle`` CLI commands build their
assertions on top of these.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad


def matmul_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product, scalar accumulation in k-order."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kk in range(k):
                s += a[i, kk] * b[kk, j]
            out[i, j] = s
    return out


def numeric_gradient(
    f: Callable[[], Tensor],
    param: Tensor,
    step: float = 1e-5,
    coords: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Central finite differences of a scalar-valued forward pass.

    ``f`` rebuilds the loss from current parameter values; it is evaluated
    under ``no_grad`` with one coordinate of ``param`` perturbed at a time.
    Returns a flat array over the probed coordinates (all by default).
    """
    flat = param.data.reshape(-1)
    coord_list = list(range(flat.size)) if coords is None else list(coords)
    grads = np.zeros(len(coord_list))
    with no_grad():
        for out_pos, i in enumerate(coord_list):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            grads[out_pos] = (f_plus - f_minus) / (2.0 * step)
    return grads


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case relative error, with an absolute floor for tiny gradients."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def kl_diag_gaussian_reference(
    mu_p: np.ndarray, sigma_p: np.ndarray, mu_q: np.ndarray, sigma_q: np.ndarray
) -> float:
    """Closed-form KL(p || q) for diagonal Gaussians, plain numpy."""
    var_p, var_q = sigma_p**2, sigma_q**2
    terms = np.log(sigma_q / sigma_p) + (var_p + (mu_p - mu_q) ** 2) / (2.0 * var_q) - 0.5
    return float(np.sum(terms))


def kl_monte_carlo(
    mu_p: np.ndarray,
    sigma_p: np.ndarray,
    mu_q: np.ndarray,
    sigma_q: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
    antithetic: bool = True,
) -> float:
    """Monte Carlo estimate of KL(p || q) as E_p[log p(x) - log q(x)].

    Antithetic pairing (eps, -eps) halves the variance without touching
    the estimator's independence from the closed form.
    """
    half = n_samples // 2 if antithetic else n_samples
    eps = rng.standard_normal((half, mu_p.size))
    if antithetic:
        eps = np.concatenate([eps, -eps], axis=0)
    x = mu_p + sigma_p * eps

    def log_pdf(x, mu, sigma):
        return np.sum(
            -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2.0 * np.pi),
            axis=1,
        )

    return float(np.mean(log_pdf(x, mu_p, sigma_p) - log_pdf(x, mu_q, sigma_q)))


_ACTIVATIONS = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "identity": lambda x: x,
}


def gcn_dense_reference(
    adjacency: np.ndarray, h: np.ndarray, weight: np.ndarray, activation: str
) -> np.ndarray:
    """Dense normalized-adjacency graph convolution.

    Computes act(D^-1/2 (A + I) D^-1/2 H W) with self-inclusive degrees,
    over stacked per-node features H of shape (n, d_in).
    """
    a_hat = adjacency.astype(np.float64) + np.eye(adjacency.shape[0])
    deg = a_hat.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    norm = a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return _ACTIVATIONS[activation](norm @ h @ weight)


def exhaustive_joint_max(q_tables: Sequence[np.ndarray]) -> float:
    """Max over all joint actions of the summed per-agent Q values."""
    best = -np.inf
    for joint in itertools.product(*(range(len(q)) for q in q_tables)):
        total = sum(float(q[a]) for q, a in zip(q_tables, joint))
        best = max(best, total)
    return best


def mlu_reference(loads: np.ndarray, capacities: np.ndarray) -> float:
    """Loop-based maximum link utilization."""
    worst = 0.0
    for load, cap in zip(loads, capacities):
        worst = max(worst, float(load) / float(cap))
    return worst


def adam_reference(
    param: np.ndarray,
    grads: Sequence[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """Replay the published Adam recurrences over a gradient sequence."""
    p = param.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p
