"""Energy-Casimir regulation of a pendulum from noisy angle measurements.

The controller needs the plant's velocity output. We compare the true velocity,
a backward difference and a fixed-lag MAP smoother, all under identical gains,
initial states and noise draws.

    python3 demos/casimir_control.py [--trials 10] [--sigma 0.01]
"""

import argparse

import numpy as np

from phast.control import (
    IC_REGIMES,
    ControlGains,
    ControlSettings,
    FiniteDifferenceEstimator,
    MapSmootherEstimator,
    OracleEstimator,
    aggregate_trials,
    run_control_batch,
    sample_regime_states,
)
from phast.envs import get_env


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=10, help="trials per initial-condition regime")
    ap.add_argument("--sigma", type=float, default=0.01, help="measurement noise std (rad)")
    args = ap.parse_args()

    plant, gains, settings = get_env("pendulum_cons"), ControlGains(), ControlSettings()
    starts = [sample_regime_states(plant, r, args.trials, 0) for r in IC_REGIMES]
    q0 = np.concatenate([a for a, _ in starts])
    p0 = np.concatenate([b for _, b in starts])
    seeds = [(0, "demo", i) for i in range(len(q0))]
    print(f"{len(q0)} trials over regimes {', '.join(IC_REGIMES)}; gains {gains}")

    estimators = [OracleEstimator(plant), MapSmootherEstimator(settings.dt, args.sigma),
                  FiniteDifferenceEstimator(settings.dt)]
    print(f"{'estimator':>12} {'success':>8} {'effort':>10} {'vel err':>8}")
    for est in estimators:
        agg = aggregate_trials(run_control_batch(plant, gains, est, args.sigma, q0, p0, seeds, settings))
        print(f"{est.name:>12} {agg['success']:8.2f} {agg['effort']:10.0f} {agg['velocity_error']:8.3f}")


if __name__ == "__main__":
    main()
