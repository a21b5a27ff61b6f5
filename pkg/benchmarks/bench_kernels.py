"""Compare the compiled and numpy kernel backends on a ring epidemic.

Usage: python benchmarks/bench_kernels.py [--agents 40] [--steps 2000] [--repeat 3]

Prints wall time per backend for a full mean-field inference and the
largest disagreement between the two posteriors.
"""

import argparse
import time

import numpy as np

from skinfer import ChainSpec, EventSpec, ModelSpec, Reactant, mf_infer, suggest_tau
from skinfer import kernels
from skinfer.observations import ObservationSet


def ring_sis(agents, c1=0.5, c2=0.2, c3=0.1):
    chains = [ChainSpec(f"p{i}", (0, 1)) for i in range(agents)]
    events = []
    for i in range(agents):
        for j in ((i + 1) % agents, (i - 1) % agents):
            events.append(EventSpec(f"inf_{j}_{i}", c1, {f"p{j}": Reactant(1, 1), f"p{i}": Reactant(1, 0)},
                                    {f"p{i}": 1}, group="infection"))
        events.append(EventSpec(f"rec_{i}", c2, {f"p{i}": Reactant(1, 1)}, {f"p{i}": -1}, group="recovery"))
        events.append(EventSpec(f"ext_{i}", c3, {f"p{i}": Reactant(1, 0)}, {f"p{i}": 1}, group="external"))
    return ModelSpec(tuple(chains), tuple(events))


def noisy_tables(agents, steps, seed):
    rng = np.random.default_rng(seed)
    sick = np.array([[0.3, 0.7]])
    well = np.array([[0.8, 0.2]])
    return ObservationSet([np.where(rng.random((steps + 1, 1)) < 0.3, well, sick) for _ in range(agents)])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=40)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    model = ring_sis(args.agents)
    tau = suggest_tau(model)
    obs = noisy_tables(args.agents, args.steps, args.seed)
    print(f"ring SIS: {args.agents} agents, {model.V} events, {args.steps} steps, tau={tau:g}")
    print(f"available backends: {', '.join(kernels.BACKENDS)} (default {kernels.BACKEND})")

    results = {}
    for name in kernels.BACKENDS:
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            post = mf_infer(model, tau, obs, backend=name)
            best = min(best, time.perf_counter() - t0)
        results[name] = (best, post)
        print(f"{name:>8}: {best:.3f} s  ({post.iterations} sweeps, bethe evidence {post.bethe_evidence:.6f})")

    if len(results) == 2:
        (tp, a), (tc, b) = results["python"], results["cython"]
        diff = max(np.abs(x.gamma - y.gamma).max() for x, y in zip(a.chains, b.chains))
        print(f"speed-up {tp / tc:.1f}x; max |gamma difference| {diff:.2e}; "
              f"evidence difference {abs(a.bethe_evidence - b.bethe_evidence):.2e}")


if __name__ == "__main__":
    main()
