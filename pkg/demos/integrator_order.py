"""Convergence of the Strang-split leapfrog step on the damped pendulum.

Halving dt should quarter the global error. The midpoint (implicit) damping
half-step keeps second order; the explicit Euler half-step loses it.

    python3 demos/integrator_order.py
"""

import numpy as np

from phast import autodiff as ad
from phast.envs import env_rhs, get_env
from phast.hamiltonian import KNOWN, HamiltonianModel
from phast.integrators import rk4_step, strang_leapfrog_step
from phast.linalg import ConstantDiagLowRank, DampingField
from phast.potentials import Cosine


def global_error(env, damping_step, dt, x0=(1.2, 0.5), t_end=2.0):
    model = HamiltonianModel(Cosine([9.81]), ConstantDiagLowRank(np.ones(1)), DampingField(1, env.constants["d0"]),
                             KNOWN, damping_step=damping_step)
    ref = np.array(x0)
    for _ in range(int(round(t_end / (dt / 100)))):
        ref = rk4_step(lambda s: env_rhs(env, s), ref, dt / 100)
    q, p = np.array([x0[0]]), np.array([x0[1]])
    with ad.no_grad():
        for _ in range(int(round(t_end / dt))):
            q, p = strang_leapfrog_step(model, q, p, dt)
    return np.hypot(q.value[0] - ref[0], p.value[0] - ref[1])


def main():
    env = get_env("pendulum_damped")
    dts = np.array([0.04, 0.02, 0.01])
    print(f"{'dt':>6} {'implicit':>12} {'explicit':>12}")
    errs = {k: [global_error(env, k, dt) for dt in dts] for k in ("implicit", "explicit")}
    for i, dt in enumerate(dts):
        print(f"{dt:6.2f} {errs['implicit'][i]:12.3e} {errs['explicit'][i]:12.3e}")
    for k, e in errs.items():
        print(f"{k} damping half-step: log-log slope {np.polyfit(np.log(dts), np.log(e), 1)[0]:.2f}")


if __name__ == "__main__":
    main()
