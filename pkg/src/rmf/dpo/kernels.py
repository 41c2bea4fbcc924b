"""Hot numeric kernels for the preference loss.

Two implementations of the same math: numba @njit kernels (default) and a
pure-numpy path.  Set RMF_DISABLE_NUMBA=1 to force the numpy path; both are
covered by the test suite and compared by benchmarks/bench_dpo.py.

Inputs are the per-pair feature difference matrix D (n x d) with rows
phi(chosen_i) - phi(rejected_i).  Because the policy is a softmax over the
pair's two candidates, log-prob ratios reduce to dot products against D, and
any per-prompt feature offset shared by both candidates cancels exactly.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("RMF_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:  # pragma: no cover - import guard
    if _DISABLE:
        raise ImportError("numba disabled by RMF_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


def _margins_np(diff: np.ndarray, theta: np.ndarray, theta_ref: np.ndarray, beta: float) -> np.ndarray:
    return beta * (diff @ (theta - theta_ref))


def _loss_np(diff: np.ndarray, theta: np.ndarray, theta_ref: np.ndarray, beta: float) -> float:
    m = _margins_np(diff, theta, theta_ref, beta)
    # -log sigmoid(m), stable for |m| up to ~1e3
    loss = np.where(m >= 0, np.log1p(np.exp(-np.abs(m))), -m + np.log1p(np.exp(m)))
    return float(loss.mean())


def _grad_np(diff: np.ndarray, theta: np.ndarray, theta_ref: np.ndarray, beta: float) -> np.ndarray:
    m = _margins_np(diff, theta, theta_ref, beta)
    # d/dtheta of mean -log sigmoid(m_i) = -(1/n) sum sigmoid(-m_i) * beta * diff_i
    w = 1.0 / (1.0 + np.exp(np.clip(m, -700, 700)))  # sigmoid(-m)
    return -(beta / diff.shape[0]) * (w @ diff)


@njit(cache=True)
def _margins_nb(diff, theta, theta_ref, beta):  # pragma: no cover - jit
    n, d = diff.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            out_j = diff[i, j] * (theta[j] - theta_ref[j])
            acc += out_j
        out[i] = beta * acc
    return out


@njit(cache=True)
def _loss_nb(diff, theta, theta_ref, beta):  # pragma: no cover - jit
    m = _margins_nb(diff, theta, theta_ref, beta)
    acc = 0.0
    for i in range(m.shape[0]):
        x = m[i]
        if x >= 0.0:
            acc += np.log1p(np.exp(-x))
        else:
            acc += -x + np.log1p(np.exp(x))
    return acc / m.shape[0]


@njit(cache=True)
def _grad_nb(diff, theta, theta_ref, beta):  # pragma: no cover - jit
    n, d = diff.shape
    m = _margins_nb(diff, theta, theta_ref, beta)
    g = np.zeros(d)
    for i in range(n):
        x = m[i]
        if x > 700.0:
            x = 700.0
        elif x < -700.0:
            x = -700.0
        w = 1.0 / (1.0 + np.exp(x))
        for j in range(d):
            g[j] -= beta * w * diff[i, j] / n
    return g


def margins(diff: np.ndarray, theta: np.ndarray, theta_ref: np.ndarray, beta: float) -> np.ndarray:
    """Per-pair sigmoid arguments beta * (log-ratio(chosen) - log-ratio(rejected))."""
    if HAVE_NUMBA:
        return _margins_nb(diff, theta, theta_ref, beta)
    return _margins_np(diff, theta, theta_ref, beta)


def loss(diff: np.ndarray, theta: np.ndarray, theta_ref: np.ndarray, beta: float) -> float:
    if HAVE_NUMBA:
        return float(_loss_nb(diff, theta, theta_ref, beta))
    return _loss_np(diff, theta, theta_ref, beta)


def grad(diff: np.ndarray, theta: np.ndarray, theta_ref: np.ndarray, beta: float) -> np.ndarray:
    if HAVE_NUMBA:
        return _grad_nb(diff, theta, theta_ref, beta)
    return _grad_np(diff, theta, theta_ref, beta)
