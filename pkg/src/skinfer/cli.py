"""Command-line interface: ``skinfer simulate|infer|learn|epi``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (including
non-convergence, in which case partial results are still written), 4 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .discretize import FrameSeries, grid_path, suggest_tau
from .epidemics import run_cohort_experiment
from .errors import NotConverged, SKMError, ValidationError
from .exact import exact_em, exact_forward_backward
from .io import (RunManifest, epidemic_config_from_dict, file_digest, load_init_distribution, load_model,
                 load_state, network_from_dict, read_frames, read_grid_events, read_json, read_observations,
                 resolve_seed, write_csv, write_frames, write_grid_events, write_json, write_observations)
from .learn import RateEstimate, mf_em, ml_rates_discrete
from .meanfield import mf_infer
from .observations import sample_observations
from .simulate import gillespie

log = logging.getLogger("skinfer")


class _Run:
    """Collects inputs and outputs of one command and writes the manifest."""

    def __init__(self, command: str, args: argparse.Namespace, seed: int | None = None):
        self.out = Path(args.out)
        cfg = {k: v for k, v in vars(args).items() if k not in {"out", "func", "verbose", "threads"}}
        self.manifest = RunManifest(command, cfg, seed, version=__version__)
        self.t0 = time.perf_counter()

    def input(self, path) -> None:
        if path is not None:
            self.manifest.inputs[str(path)] = file_digest(path)

    def open(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.manifest.outputs.append(name)
        return self.out / name

    def close(self, status: str = "ok") -> None:
        self.manifest.status = status
        self.manifest.elapsed = time.perf_counter() - self.t0
        self.manifest.write(self.out)


def cmd_simulate(args) -> int:
    model, obs_model = load_model(args.model)
    init = load_state(args.init, model)
    seed = resolve_seed(args.seed, read_json(args.init).get("seed"))
    run = _Run("simulate", args, seed)
    run.input(args.model)
    run.input(args.init)
    path = gillespie(model, init, args.horizon, seed)
    tau = args.tau if args.tau is not None else suggest_tau(model)
    frames = grid_path(model, path, tau)
    run.open()
    write_csv(run.path("path.csv"), ["time", "event"], ((t, model.events[v].name) for t, v in path.records))
    write_frames(run.path("frames.csv"), model, frames.frames)
    write_grid_events(run.path("events.csv"), model, frames.events)
    if obs_model.chains:
        obs = sample_observations(frames, model, obs_model, seed)
        write_observations(run.path("observations.csv"), model, obs)
    write_json(run.path("summary.json"), {"tau": tau, "steps": frames.T, "events": len(path),
                                          "horizon": path.horizon})
    run.close()
    return 0


def _write_posterior(run: _Run, model, gammas, event_marginals, evidence: dict) -> None:
    write_csv(run.path("gamma.csv"), ["t", "chain", "state", "prob"],
              ((t, c.name, s, float(g[t, j])) for t in range(gammas[0].shape[0])
               for c, g in zip(model.chains, gammas) for j, s in enumerate(c.states)))
    names = [e.name for e in model.events] + [""]
    write_csv(run.path("event_marginals.csv"), ["t", "event", "prob"],
              ((t + 1, names[v], float(event_marginals[t, v])) for t in range(event_marginals.shape[0])
               for v in range(len(names))))
    write_json(run.path("evidence.json"), evidence)


def cmd_infer(args) -> int:
    model, obs_model = load_model(args.model)
    obs = read_observations(args.obs, model, obs_model, args.steps)
    init = load_init_distribution(args.init, model)
    run = _Run("infer", args)
    for p in (args.model, args.obs, args.init):
        run.input(p)
    if args.engine == "exact":
        post = exact_forward_backward(model, args.tau, obs, init=init)
        run.open()
        _write_posterior(run, model, post.chain_marginals(), post.event_marginals,
                         {"engine": "exact", "log_evidence": post.log_evidence})
        run.close()
        return 0
    status, code = "ok", 0
    try:
        post = mf_infer(model, args.tau, obs, init=init, tol=args.tol, max_sweeps=args.max_sweeps, strict=True)
    except NotConverged as exc:
        post, status, code = exc.result, "not-converged", exc.exit_code
        print(f"error: {exc}", file=sys.stderr)
    run.open()
    _write_posterior(run, model, post.gamma, post.event_marginals,
                     {"engine": "meanfield", "bethe_evidence": post.bethe_evidence, "sweeps": post.iterations,
                      "converged": post.converged, "residual": post.residual})
    run.close(status)
    return code


def _parse_rates(text: str | None, model) -> np.ndarray | None:
    if text is None:
        return None
    if Path(text).is_file():
        doc = read_json(text)
        if isinstance(doc, dict):
            doc = doc.get("rates", doc)
        if isinstance(doc, dict):
            return np.array([float(doc.get(e.name, doc.get(e.rate_group, e.rate_constant))) for e in model.events])
        values = doc
    else:
        try:
            values = [float(x) for x in text.split(",")]
        except ValueError:
            raise ValidationError(f"--init-rates: expected a file or comma-separated numbers, got {text!r}") from None
    if len(values) == 1:
        values = values * model.V
    if len(values) != model.V:
        raise ValidationError(f"--init-rates: expected {model.V} values, got {len(values)}")
    return np.asarray(values, dtype=float)


def _write_estimate(run: _Run, model, est: RateEstimate) -> None:
    doc = est.as_dict()
    doc["events"] = {e.name: float(r) for e, r in zip(model.events, est.rates)}
    if est.zero_init is not None and est.zero_init.any():
        doc["warnings"] = [f"rate group {g!r} starts at zero and cannot be learned"
                           for g, z in zip(est.group_names, est.zero_init) if z]
    write_json(run.path("rates.json"), doc)
    if est.trace:
        write_csv(run.path("trace.csv"), ["iteration", "evidence"] + [e.name for e in model.events],
                  ((i + 1, ev, *rates) for i, (rates, ev) in enumerate(est.trace)))


def cmd_learn(args) -> int:
    model, obs_model = load_model(args.model)
    run = _Run("learn", args)
    run.input(args.model)
    if args.frames is not None:
        frames = read_frames(args.frames, model)
        events = read_grid_events(args.events, model) if args.events else None
        fs = FrameSeries(args.tau, frames, events)
        if events is None:
            fs = _label_frames(model, fs)
        fs.validate(model)
        run.input(args.frames)
        run.input(args.events)
        est = ml_rates_discrete(model, fs, small_tau=args.small_tau)
    else:
        if args.obs is None:
            raise ValidationError("learn needs --frames or --obs")
        obs = read_observations(args.obs, model, obs_model, args.steps)
        init = load_init_distribution(args.init, model)
        run.input(args.obs)
        run.input(args.init)
        rates = _parse_rates(args.init_rates, model)
        if args.engine == "exact":
            est = exact_em(model, args.tau, obs, init_rates=rates, init=init, max_iters=args.max_iters, tol=args.tol)
        else:
            est = mf_em(model, args.tau, obs, init_rates=rates, init=init, max_iters=args.max_iters, tol=args.tol)
    run.open()
    _write_estimate(run, model, est)
    run.close()
    return 0


def _label_frames(model, fs: FrameSeries) -> FrameSeries:
    """Recover event labels from frame differences when they are unambiguous."""
    from .discretize import _delta_matrix

    deltas = _delta_matrix(model)
    cm = model.compiled
    events = np.full(fs.T, -1, dtype=np.intp)
    for t in range(1, fs.T + 1):
        step = fs.frames[t] - fs.frames[t - 1]
        if not step.any():
            continue
        g = cm.event_factors(cm.state_indices(fs.frames[t - 1], model))
        hits = [v for v in range(model.V) if np.array_equal(deltas[v], step) and g[v] > 0]
        if len(hits) != 1:
            raise ValidationError(f"step {t}: frame change matches {len(hits)} events; supply --events")
        events[t - 1] = hits[0]
    return FrameSeries(fs.tau, fs.frames, events)


def _epi_job(job):
    network, config, seed, horizon = job
    return run_cohort_experiment(network, config, seed, horizon=horizon)


def cmd_epi(args) -> int:
    net_doc = read_json(args.network)
    cfg_doc = read_json(args.config)
    seed = resolve_seed(args.seed, cfg_doc.get("seed") if isinstance(cfg_doc, dict) else None)
    network = network_from_dict(net_doc, seed)
    if not any(w.edges for w in network.windows):
        raise ValidationError(f"{args.network}: the network has no contacts")
    config = epidemic_config_from_dict(cfg_doc, network)
    run = _Run("epi", args, seed)
    run.input(args.network)
    run.input(args.config)
    seeds = [seed + r for r in range(args.replicas)]
    jobs = [(network, config, s, args.horizon) for s in seeds]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            reports = list(pool.map(_epi_job, jobs))
    else:
        reports = [_epi_job(j) for j in jobs]
    run.open()
    summary = {"config": {"c1": config.c1, "c2": config.c2, "c3": config.c3,
                          "volunteer_fraction": config.volunteer_fraction}, "replicas": {}}
    for s, rep in zip(seeds, reports):
        tag = "" if len(seeds) == 1 else f"_{s}"
        for name, roc in (("variational", rep.roc_variational), ("baseline", rep.roc_baseline)):
            if roc is not None:
                write_csv(run.path(f"roc_{name}{tag}.csv"), ["threshold", "fpr", "tpr"],
                          zip(roc.thresholds, roc.fpr, roc.tpr))
        write_csv(run.path(f"population{tag}.csv"), ["day", "truth", "variational", "baseline"],
                  zip(range(1, len(rep.population_truth) + 1), rep.population_truth, rep.population_variational,
                      rep.population_baseline))
        summary["replicas"][str(s)] = rep.summary()
    diffs = [r.auc_variational - r.auc_baseline for r in reports]
    summary["variational_wins"] = int(sum(d > 0 for d in diffs))
    write_json(run.path("report.json"), summary)
    run.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skinfer", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="exact simulation, grid frames and sampled observations")
    p.add_argument("--model", required=True)
    p.add_argument("--init", required=True, help='JSON {"state": {chain: value}}')
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="posterior marginals from observations")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True, help="CSV t,chain,symbol")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--steps", type=int, help="number of steps T (default: last observed step)")
    p.add_argument("--engine", choices=("exact", "meanfield"), default="meanfield")
    p.add_argument("--init", help='JSON {"init": {chain: [p, ...]}} or {"state": {...}}')
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("learn", help="fit rate constants")
    p.add_argument("--model", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--frames", help="CSV t,chain,state (fully observed)")
    p.add_argument("--events", help="CSV t,event labelling the frames")
    p.add_argument("--small-tau", action="store_true", help="closed-form estimate instead of the exact grid ML")
    p.add_argument("--obs", help="CSV t,chain,symbol (partial observations, EM)")
    p.add_argument("--steps", type=int)
    p.add_argument("--init")
    p.add_argument("--engine", choices=("exact", "meanfield"), default="meanfield")
    p.add_argument("--init-rates", help="comma-separated rates or a JSON file")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("epi", help="synthetic cohort experiment with ROC and population series")
    p.add_argument("--network", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--horizon", type=float, help="days (default: the whole network)")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_epi)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except SKMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
