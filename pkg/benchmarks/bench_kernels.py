"""Compare the numba and numpy kernel paths on a training-sized batch.

    python3 benchmarks/bench_kernels.py --rollouts 60 --repeat 200
"""

import argparse
import timeit

import numpy as np

from tiresrag import _kernels as K
from tiresrag.policy import LEGAL, N_ACTIONS, N_STATES


def make_batch(rng, n_rollouts, steps_per_rollout):
    n = n_rollouts * steps_per_rollout
    states = rng.integers(N_STATES, size=n)
    actions = np.array([rng.choice(np.flatnonzero(LEGAL[s])) for s in states])
    theta = rng.normal(size=(N_STATES, N_ACTIONS))
    old = K.np_step_logp(theta, LEGAL, 1.0, states, actions) + rng.normal(scale=0.1, size=n)
    coef = np.full(n, 1.0 / steps_per_rollout)
    adv = np.repeat(rng.normal(size=n_rollouts), steps_per_rollout)
    return theta, states, actions, old, coef, adv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rollouts", type=int, default=60)
    ap.add_argument("--steps", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        print("numba not installed; only the numpy path is available")
    rng = np.random.default_rng(args.seed)
    theta, s, a, old, coef, adv = make_batch(rng, args.rollouts, args.steps)
    x = rng.normal(size=args.rollouts)

    cases = {
        "zscore": (K.np_zscore, K.nb_zscore, (x,)),
        "step_logp": (K.np_step_logp, K.nb_step_logp, (theta, LEGAL, 1.0, s, a)),
        "surrogate_grad": (K.np_surrogate_grad, K.nb_surrogate_grad,
                           (theta, LEGAL, 1.0, s, a, old, coef, adv, 0.2)),
    }
    print(f"{'kernel':<16}{'numpy us':>12}{'numba us':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, (f_np, f_nb, fargs) in cases.items():
        r_np = f_np(*fargs)
        r_nb = f_nb(*fargs)  # also triggers compilation
        if isinstance(r_np, tuple):
            diff = max(abs(r_np[0] - r_nb[0]), float(np.max(np.abs(r_np[1] - r_nb[1]))))
        else:
            diff = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
        t_np = timeit.timeit(lambda: f_np(*fargs), number=args.repeat) / args.repeat * 1e6
        t_nb = timeit.timeit(lambda: f_nb(*fargs), number=args.repeat) / args.repeat * 1e6
        print(f"{name:<16}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
