"""Gradient descent from a planted start versus a random start.

The planted start copies the inner weights of a compiled Taylor network for
sin(2x) into the first subnets; the output layer still starts at zero.  Both
runs use the same data, step size rule and number of steps.
"""
import numpy as np

from overparam_net import construct, taylor
from overparam_net.estimator import Planted, fit, predict, schedule_from_theorem
from overparam_net.experiments import ExperimentConfig, generate_data, mc_l2_error
from overparam_net.network import Topology


def main(n=200, seeds=5, steps=60):
    f = taylor.sin_target(2.0, d=1, p=2.0)
    cfg = ExperimentConfig(target="sin", p=2.0, noise=0.1)
    h = construct.assemble_taylor_net(f, 3, L=2, r=12)
    topo = Topology(1, len(h.blueprints) + 6, 2, 12)
    sched = schedule_from_theorem(2.0, f.C, 1, n, K_n=topo.K)
    rows = []
    for s in range(seeds):
        data = generate_data(cfg, n, s)
        kw = dict(seed=s, step_size="probe", steps=steps, topology=topo)
        for label, mode in (("planted", Planted(h.blueprints, 1e-4)), ("random", "random")):
            rep = fit(data, sched, mode, **kw)
            err = mc_l2_error(lambda X: predict(rep, X), f, 1, 1.0, 20000, seed=s)
            rows.append((label, rep.trace.risks[-1], err.value))
    for label in ("planted", "random"):
        risk = np.median([r[1] for r in rows if r[0] == label])
        l2 = np.median([r[2] for r in rows if r[0] == label])
        print(f"{label:>8}: median final risk {risk:.4f}, median L2 error {l2:.4f}")


if __name__ == "__main__":
    main()
