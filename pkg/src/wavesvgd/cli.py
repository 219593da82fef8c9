"""Command-line driver.

Subcommands::

    wavesvgd validate-config --config exp.yaml
    wavesvgd run-forward     --config exp.yaml [--out DIR]
    wavesvgd run-inference   --config exp.yaml [--seed N] [--workers N]
    wavesvgd run-baseline    --config exp.yaml
    wavesvgd run-compare     --config exp.yaml

Every data file starts with a header block (config hash, seed, version,
timestamp).  Failures print a JSON object to stderr and exit nonzero:
2 for configuration errors, 1 for anything else.
"""
import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import read_chain_csv, write_chain_csv
from .config import ConfigError, config_hash, load_config
from .experiments import (
    build_problem,
    observation_positions,
    predictive_bands,
    run_sampler,
    sample_losses,
    thin,
)
from .inference import marginal_modes, read_trace_csv, write_trace_csv
from .io import make_header, read_csv, write_csv, write_json
from .studies import boundary_study, derivative_study, min_ppw

__all__ = ["main", "build_parser"]

log = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_RUNTIME = 1
DERIVATIVE_TOL = 5e-4
BOUNDARY_TOL = 1e-2
RECONSTRUCTION_PPW = (35, 49, 55)
HIST_BINS = 30


def build_parser():
    p = argparse.ArgumentParser(prog="wavesvgd", description="Bayesian 1D wave inversion with SVGD.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("validate-config", "check a configuration file without running anything"),
        ("run-forward", "synthetic observations plus derivative and boundary studies"),
        ("run-inference", "run the configured SVGD sampler (sweep for low contrast)"),
        ("run-baseline", "run the random-walk Metropolis reference"),
        ("run-compare", "align finished runs by forward-solve budget"),
    ]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="YAML configuration file")
        s.add_argument("--seed", type=int, default=None, help="override the sampler seed")
        s.add_argument("--out", default=None, help="override the output directory")
        s.add_argument("--workers", type=int, default=None, help="override the worker count")
        s.add_argument("--timing", action="store_true", help="also write timing.json (not deterministic)")
    return p


def _load(args):
    cfg = load_config(args.config)
    try:
        cfg = cfg.with_overrides(seed=args.seed, output_dir=args.out, workers=args.workers)
    except Exception as exc:  # pydantic re-validation of the overrides
        raise ConfigError([{"loc": "<override>", "msg": str(exc)}]) from None
    return cfg


def _header(cfg, **extra):
    return make_header(config_hash(cfg), cfg.seed, extra)


def _out(cfg, *parts):
    d = Path(cfg.output_dir).joinpath(*parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_config(cfg, out):
    write_json(out / "config.json", {"config": cfg.model_dump(exclude={"output_dir", "workers"})},
               header=_header(cfg))


def _write_observations(path, record, header):
    cols = ["time"] + [f"x={x!r}" for x in record.node_positions]
    rows = [[float(t)] + [float(v) for v in record.values[:, k]] for k, t in enumerate(record.times)]
    return write_csv(path, cols, rows, header=header)


# --------------------------------------------------------------------------
# run-forward
# --------------------------------------------------------------------------

def run_forward(cfg):
    out = _out(cfg, "forward")
    _write_config(cfg, out)
    problem = build_problem(cfg)
    head = _header(cfg, kind=cfg.kind)
    _write_observations(out / "observations_clean.csv", problem.clean, head)
    _write_observations(out / "observations_noisy.csv", problem.data, {**head, "noise_seed": cfg.noise.seed})
    files = ["observations_clean.csv", "observations_noisy.csv"]
    if cfg.forward.studies:
        files += _derivative_report(cfg, out) + _boundary_report(cfg, out)
    return {"output_dir": str(out), "files": files}


def _derivative_report(cfg, out):
    ppw = sorted(set(cfg.forward.ppw) | set(RECONSTRUCTION_PPW))
    results = derivative_study(ppw)
    rows = [r for res in results for r in res.rows()]
    head = _header(cfg, tolerance=DERIVATIVE_TOL)
    write_csv(out / "derivative_study.csv", ["kind", "order", "ppw", "rel_error", "interior_rel_error"],
              rows, header=head)
    summary = []
    for res in results:
        recon = {int(p): float(e) for p, e in zip(res.ppw, res.error) if p in RECONSTRUCTION_PPW}
        summary.append({"kind": res.kind, "order": res.order, "interior_order": res.interior_order,
                        "min_ppw": min_ppw(res.ppw, res.error, DERIVATIVE_TOL),
                        "reconstruction_error": recon})
    write_json(out / "derivative_summary.json", {"tolerance": DERIVATIVE_TOL, "results": summary}, header=head)
    return ["derivative_study.csv", "derivative_summary.json"]


def _boundary_report(cfg, out):
    results = boundary_study(cfg.forward.boundary_ppw, backend=cfg.backend)
    head = _header(cfg, tolerance=BOUNDARY_TOL)
    rows = [r for res in results for r in res.rows()]
    write_csv(out / "boundary_study.csv", ["scheme", "ppw", "rel_error", "post_exit_residual"], rows, header=head)
    summary = {res.scheme: {"min_ppw": min_ppw(res.ppw, res.error, BOUNDARY_TOL)} for res in results}
    write_json(out / "boundary_summary.json", {"tolerance": BOUNDARY_TOL, "schemes": summary}, header=head)
    return ["boundary_study.csv", "boundary_summary.json"]


# --------------------------------------------------------------------------
# run-inference
# --------------------------------------------------------------------------

def _histograms(samples, names, bins=HIST_BINS):
    rows = []
    for j, name in enumerate(names):
        counts, edges = np.histogram(samples[:, j], bins=bins)
        rows += [[name, int(b), float(edges[b]), float(edges[b + 1]), int(counts[b])] for b in range(bins)]
    return rows


def _write_particles(path, theta, names, header):
    rows = [[i] + [float(v) for v in theta[i]] for i in range(theta.shape[0])]
    return write_csv(path, ["particle"] + names, rows, header=header)


def _write_samples(out, problem, result, head):
    """Trace or chain, final sample, histograms and snapshots for one run."""
    theta, names = result["particles"], problem.names
    files = []
    if "trace" in result:
        write_trace_csv(out / "trace.csv", result["trace"], header=head)
        files.append("trace.csv")
    if "chain" in result:
        write_chain_csv(out / "chain.csv", result["chain"], header=head, names=names)
        files.append("chain.csv")
    _write_particles(out / "particles.csv", theta, names, head)
    write_csv(out / "histogram.csv", ["parameter", "bin", "left", "right", "count"],
              _histograms(theta, names), header=head)
    files += ["particles.csv", "histogram.csv"]
    snaps = result.get("snapshots")
    if snaps:
        rows = [[it, i] + [float(v) for v in X[i]] for it, X in snaps for i in range(X.shape[0])]
        write_csv(out / "snapshots.csv", ["iteration", "particle"] + names, rows, header=head)
        files.append("snapshots.csv")
    return files


def _run_with_snapshots(problem, cfg, method, omega, seed):
    snaps = []
    model = problem.model

    def keep(it, X, _):
        snaps.append((int(it), model.from_unit(X)))

    result = run_sampler(problem, cfg, method=method, omega=omega, seed=seed, callback=keep)
    result["snapshots"] = snaps
    return result


def _summary(problem, result, method, omega):
    theta, names = result["particles"], problem.names
    modes = marginal_modes(theta)
    info = {"method": method, "omega": omega, "names": names, "forward_solves": int(result["forward_solves"]),
            "theta_true": problem.theta_true, "mode": modes,
            "mode_rel_error": np.abs(modes - problem.theta_true) / np.abs(problem.theta_true),
            "mean": theta.mean(axis=0), "std": theta.std(axis=0)}
    if "trace" in result:
        tr = result["trace"]
        last = tr.rows[-1]
        info.update({"stop_reason": tr.stop_reason, "iterations": int(last["iteration"]),
                     "final_loss": last["loss"], "final_elbo": last["elbo"], "final_sup_norm": last["sup_norm"]})
    if "chain" in result:
        ch = result["chain"]
        info.update({"acceptance_rate": ch.acceptance_rate(), "burn_in": ch.burn_in, "final_scale": ch.scale})
    return info


def _clean(obj):
    """Replace non-finite floats by None so the JSON is standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _sweep_job(cfg, degree, omega, index):
    problem = build_problem(cfg, degree)
    method = cfg.sampler.method
    result = _run_with_snapshots(problem, cfg, method, omega, cfg.seed + index)
    out = _out(cfg, "inference", f"k{degree}_omega{omega:g}")
    head = _header(cfg, degree=degree, omega=omega, method=method, job_seed=cfg.seed + index)
    files = _write_samples(out, problem, result, head)
    bands = predictive_bands(problem, result["particles"])
    c2 = np.sqrt(np.clip(bands, 0.0, None))
    true_c = np.sqrt(problem.true_field)
    rows = [[float(x), float(t), float(c2[0, i]), float(c2[1, i]), float(c2[2, i])]
            for i, (x, t) in enumerate(zip(problem.grid, true_c))]
    write_csv(out / "bands.csv", ["x", "speed_true", "speed_q05", "speed_q50", "speed_q95"], rows, header=head)
    files.append("bands.csv")
    inside = (true_c >= c2[0] - 1e-12) & (true_c <= c2[2] + 1e-12)
    model = problem.model
    neg_lp = np.array([-model.base.log_posterior(t) for t in result["particles"]])
    last = result["trace"].rows[-1]
    elbo = last["elbo"]
    if not np.isfinite(elbo):
        elbo = sample_losses(problem, cfg, result["unit"], [1.0], seed=cfg.seed + index)[1.0]["elbo"]
    summary = _summary(problem, result, method, omega)
    summary.update({"degree": degree, "truth_inside_fraction": float(inside.mean()),
                    "median_max_rel_speed_error": float(np.max(np.abs(c2[1] - true_c) / true_c))})
    write_json(out / "summary.json", _clean(summary), header=head)
    files.append("summary.json")
    row = [degree, float(omega), method, result["trace"].stop_reason, int(result["forward_solves"]),
           float(np.min(neg_lp)), float(np.mean(neg_lp)), float(elbo),
           float(np.log(-elbo)) if elbo < 0 else float("nan"), float(inside.mean())]
    return row, [str(out / f) for f in files]


def run_inference(cfg):
    method = cfg.sampler.method
    if method == "rwm":
        raise ValueError("sampler.method 'rwm' is handled by run-baseline")
    if cfg.kind == "high_contrast":
        out = _out(cfg, "inference")
        _write_config(cfg, out)
        omega = cfg.sampler.gsvgd.omega
        problem = build_problem(cfg)
        result = _run_with_snapshots(problem, cfg, method, omega, cfg.seed)
        head = _header(cfg, method=method, omega=omega)
        files = _write_samples(out, problem, result, head)
        write_json(out / "summary.json", _clean(_summary(problem, result, method, omega)), header=head)
        return {"output_dir": str(out), "files": files + ["summary.json"]}
    out = _out(cfg, "inference")
    _write_config(cfg, out)
    jobs = [(k, float(w)) for k in cfg.low_contrast.degrees for w in cfg.sweep.omegas]
    if cfg.workers > 1:
        # independent (k, omega) jobs; each gets one worker and its own seed
        job_cfg = cfg.with_overrides(workers=1)
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda a: _sweep_job(job_cfg, a[1][0], a[1][1], a[0]), enumerate(jobs)))
    else:
        results = [_sweep_job(cfg, k, w, i) for i, (k, w) in enumerate(jobs)]
    cols = ["degree", "omega", "method", "stop_reason", "forward_solves", "min_neg_log_posterior",
            "mean_neg_log_posterior", "elbo", "log_neg_elbo", "truth_inside_fraction"]
    write_csv(out / "sweep_summary.csv", cols, [r for r, _ in results], header=_header(cfg, method=method))
    return {"output_dir": str(out), "files": ["sweep_summary.csv"] + [f for _, fs in results for f in fs]}


# --------------------------------------------------------------------------
# run-baseline
# --------------------------------------------------------------------------

def run_baseline(cfg):
    out = _out(cfg, "baseline")
    _write_config(cfg, out)
    degrees = [None] if cfg.kind == "high_contrast" else list(cfg.low_contrast.degrees)
    files = []
    for k in degrees:
        sub = out if k is None else _out(cfg, "baseline", f"k{k}")
        problem = build_problem(cfg, k)
        result = run_sampler(problem, cfg, method="rwm", seed=cfg.seed)
        head = _header(cfg, method="rwm", degree="" if k is None else k)
        files += [str(sub / f) for f in _write_samples(sub, problem, result, head)]
        summary = _summary(problem, result, "rwm", None)
        write_json(sub / "summary.json", _clean(summary), header=head)
        files.append(str(sub / "summary.json"))
    return {"output_dir": str(out), "files": files}


# --------------------------------------------------------------------------
# run-compare
# --------------------------------------------------------------------------

def _load_run(path):
    """Method, unit-free final sample and (for SVGD) trace of a finished run directory."""
    path = Path(path)
    if (path / "trace.csv").exists():
        head, tr = read_trace_csv(path / "trace.csv")
        method = head.get("method", "svgd")
    elif (path / "chain.csv").exists():
        head, tr, method = {}, None, "rwm"
    else:
        raise FileNotFoundError(f"{path} has neither trace.csv nor chain.csv")
    _, cols, rows = read_csv(path / "particles.csv")
    theta = np.array([[float(v) for v in r[1:]] for r in rows])
    if method == "rwm":
        chain = read_chain_csv(path / "chain.csv")
        theta = chain.sampling()
    return {"path": str(path), "method": method, "theta": theta, "trace": tr}


def _loss_at_budget(trace, budget):
    fs, loss = trace["forward_solves"], trace["loss"]
    ok = fs <= budget
    return float(loss[ok][-1]) if ok.any() else float("nan")


def run_compare(cfg, base_dir=None):
    if not cfg.compare.runs:
        raise ValueError("compare.runs is empty")
    base = Path(base_dir) if base_dir else Path.cwd()
    runs = [_load_run(base / r) for r in cfg.compare.runs]
    out = _out(cfg, "compare")
    head = _header(cfg)
    svgd = [k for k, r in enumerate(runs) if r["trace"] is not None]
    budgets = sorted({int(b) for k in svgd for b in runs[k]["trace"]["forward_solves"]})
    rows = []
    for b in budgets:
        ref_loss = _loss_at_budget(runs[svgd[0]]["trace"], b)
        for k in svgd:
            loss = _loss_at_budget(runs[k]["trace"], b)
            rows.append([b, k, runs[k]["method"], cfg.compare.runs[k], loss, loss - ref_loss])
    write_csv(out / "budget_table.csv", ["budget", "run", "method", "path", "loss", "loss_minus_first"],
              rows, header=head)
    problem = build_problem(cfg)
    final_rows = []
    for k, r in enumerate(runs):
        X = problem.model.to_unit(thin(r["theta"], cfg.sampler.particles))
        scores = sample_losses(problem, cfg, X, cfg.compare.omegas, seed=cfg.seed)
        for w, s in scores.items():
            final_rows.append([k, r["method"], cfg.compare.runs[k], w, s["loss"], s["sup_norm"], s["elbo"]])
    write_csv(out / "final_losses.csv", ["run", "method", "path", "omega", "loss", "sup_norm", "elbo"],
              final_rows, header=head)
    return {"output_dir": str(out), "files": ["budget_table.csv", "final_losses.csv"]}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

COMMANDS = {
    "run-forward": run_forward,
    "run-inference": run_inference,
    "run-baseline": run_baseline,
}


def _fail(kind, message, details=None, code=EXIT_RUNTIME):
    payload = {"error": {"type": kind, "message": message}}
    if details:
        payload["error"]["details"] = details
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), exc.errors, EXIT_CONFIG)
    if args.command == "validate-config":
        print(json.dumps({"valid": True, "config_hash": config_hash(cfg),
                          "observation_positions": observation_positions(cfg).tolist()}, sort_keys=True))
        return 0
    t0 = time.perf_counter()
    try:
        if args.command == "run-compare":
            result = run_compare(cfg, base_dir=Path(args.config).parent)
        else:
            result = COMMANDS[args.command](cfg)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        return _fail(type(exc).__name__, str(exc))
    if args.timing:
        write_json(Path(result["output_dir"]) / "timing.json",
                   {"command": args.command, "wall_time_s": time.perf_counter() - t0})
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
