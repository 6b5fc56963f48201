"""Numeric inner loops: z-scores, tabular softmax log-probs, clipped surrogate.

Each kernel has a numba ``@njit`` implementation and a pure-numpy twin.
The numba path is used unless ``TIRES_DISABLE_JIT`` is set to a truthy
value or numba cannot be imported.  Both paths are exported under explicit
names (``nb_*`` / ``np_*``) so tests and the benchmark can compare them.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("TIRES_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def np_zscore(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.max() == x.min():
        return np.zeros_like(x)
    mu = x.sum() / x.size
    d = x - mu
    sd = np.sqrt((d * d).sum() / x.size)
    return d / sd


def np_log_softmax_rows(theta, legal, inv_temp):
    z = np.where(legal, theta * inv_temp, -np.inf)
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    return np.where(legal, z - lse, -np.inf)


def np_step_logp(theta, legal, inv_temp, states, actions):
    rows = np_log_softmax_rows(theta[states], legal[states], inv_temp)
    return rows[np.arange(len(states)), actions]


def np_surrogate_grad(theta, legal, inv_temp, states, actions, old_logp, step_coef, step_adv, eps):
    """Value and gradient of sum_t coef_t * min(r_t A_t, clip(r_t) A_t).

    ``step_coef`` carries the 1/|o_i| per-rollout averaging, ``step_adv`` the
    rollout advantage broadcast to its steps.
    """
    lsm = np_log_softmax_rows(theta[states], legal[states], inv_temp)
    n = len(states)
    new_logp = lsm[np.arange(n), actions]
    ratio = np.exp(new_logp - old_logp)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    un = ratio * step_adv
    cl = clipped * step_adv
    active = un <= cl
    value = float((step_coef * np.where(active, un, cl)).sum())
    scale = np.where(active, step_coef * step_adv * ratio, 0.0) * inv_temp
    probs = np.where(legal[states], np.exp(lsm), 0.0)
    local = -probs
    local[np.arange(n), actions] += 1.0
    local *= scale[:, None]
    grad = np.zeros_like(theta)
    np.add.at(grad, states, local)
    return value, grad


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def nb_zscore(x):
    n = x.shape[0]
    out = np.zeros(n)
    if n == 0:
        return out
    lo = x[0]
    hi = x[0]
    for i in range(n):
        if x[i] < lo:
            lo = x[i]
        if x[i] > hi:
            hi = x[i]
    if lo == hi:
        return out
    s = 0.0
    for i in range(n):
        s += x[i]
    mu = s / n
    v = 0.0
    for i in range(n):
        v += (x[i] - mu) * (x[i] - mu)
    sd = np.sqrt(v / n)
    for i in range(n):
        out[i] = (x[i] - mu) / sd
    return out


@njit(cache=True)
def _nb_row_lse(theta, legal, inv_temp, s):
    m = -np.inf
    for a in range(theta.shape[1]):
        if legal[s, a]:
            z = theta[s, a] * inv_temp
            if z > m:
                m = z
    acc = 0.0
    for a in range(theta.shape[1]):
        if legal[s, a]:
            acc += np.exp(theta[s, a] * inv_temp - m)
    return m + np.log(acc)


@njit(cache=True)
def nb_step_logp(theta, legal, inv_temp, states, actions):
    n = states.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = states[i]
        out[i] = theta[s, actions[i]] * inv_temp - _nb_row_lse(theta, legal, inv_temp, s)
    return out


@njit(cache=True)
def nb_surrogate_grad(theta, legal, inv_temp, states, actions, old_logp, step_coef, step_adv, eps):
    n = states.shape[0]
    grad = np.zeros_like(theta)
    value = 0.0
    for i in range(n):
        s = states[i]
        lse = _nb_row_lse(theta, legal, inv_temp, s)
        new_lp = theta[s, actions[i]] * inv_temp - lse
        r = np.exp(new_lp - old_logp[i])
        c = r
        if c < 1.0 - eps:
            c = 1.0 - eps
        elif c > 1.0 + eps:
            c = 1.0 + eps
        un = r * step_adv[i]
        cl = c * step_adv[i]
        if un <= cl:
            value += step_coef[i] * un
            scale = step_coef[i] * step_adv[i] * r * inv_temp
            for a in range(theta.shape[1]):
                if legal[s, a]:
                    grad[s, a] -= scale * np.exp(theta[s, a] * inv_temp - lse)
            grad[s, actions[i]] += scale
        else:
            value += step_coef[i] * cl
    return value, grad


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

USE_JIT = HAS_NUMBA and not _DISABLE
BACKEND = "numba" if USE_JIT else "numpy"

if USE_JIT:
    def zscore(x):
        return nb_zscore(np.ascontiguousarray(x, dtype=np.float64))

    step_logp = nb_step_logp
    surrogate_grad = nb_surrogate_grad
else:
    zscore = np_zscore
    step_logp = np_step_logp
    surrogate_grad = np_surrogate_grad
