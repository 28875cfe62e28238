"""Command-line entry point.

Commands: ``simulate``, ``train-posterior``, ``posterior``, ``learn``,
``eval`` and ``bench``. Every command accepts ``--config FILE`` (JSON
object keyed by the long flag names with dashes replaced by underscores);
explicit flags override the file, which overrides the defaults. The
resolved configuration is written into each output manifest.

Exit codes: 0 success, 2 invalid configuration, 3 learner divergence,
4 timeout with partial output written.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .abic import AbicConfig, AbicDivergenceError, abic_fit
from .fci import FciConfig, fci_learn
from .graph import Admg, GraphError, Pag, mag_to_pag, skeleton_of
from .metrics import as_pag, pag_metrics, posterior_quality, shd
from .simulate import GraphSamplerConfig, SimulationError, simulate_suite
from .spot import GuideConfig, spot_fit

log = logging.getLogger("spotmag")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_TIMEOUT = 0, 2, 3, 4
DEFAULT_MODEL_NAME = "cascade.pkl"


class ConfigError(ValueError):
    pass


def _range(text) -> tuple[int, int]:
    s = str(text)
    try:
        if ".." in s:
            a, b = s.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(s)
    except ValueError:
        raise ConfigError(f"invalid node range {text!r}") from None
    if lo < 1 or hi < lo:
        raise ConfigError(f"invalid node range {text!r}")
    return lo, hi


def _pair(text) -> tuple[float, float]:
    try:
        if isinstance(text, (list, tuple)):
            a, b = text
        else:
            a, b = str(text).split(",", 1)
        return float(a), float(b)
    except ValueError:
        raise ConfigError(f"expected two comma-separated numbers, got {text!r}") from None


# flag defaults live here rather than in argparse so a config file can sit between them
DEFAULTS = {
    "simulate": {"d": "20..50", "n": 1000, "count": 10, "seed": 0, "indegree": "1,1.5",
                 "bidirected": "0.05,0.15", "topology": "er"},
    "train-posterior": {"count": 100, "d": "20..50", "n": 1000, "seed": 0, "holdout": 10,
                        "stages": 3, "max_cond": 3, "topology": "er"},
    "posterior": {"replicas": 20, "subsample": 0.9, "seed": 0},
    "learn": {"method": "abic", "guide_c": 0.1, "shrink_test": "step", "draw_scope": "alm_step",
              "lam": 0.05, "omega": 0.05, "alm_steps": 20, "inner_steps": 10, "inner_maxiter": 100, "seed": 0, "alpha": 0.01, "max_cond_size": 4},
    "eval": {},
    "bench": {"methods": "fci,abic,spot", "jobs": 1, "guide_c": 0.1, "shrink_test": "step",
              "draw_scope": "alm_step", "lam": 0.05, "omega": 0.05,
              "alm_steps": 20, "inner_steps": 10, "inner_maxiter": 100, "seed": 0, "alpha": 0.01, "max_cond_size": 4},
}


def _resolve(args) -> dict:
    cfg = dict(DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                filecfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(filecfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in filecfg.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "func", "config"):
            cfg[k] = v
    return cfg


def _model_path(cfg) -> Path:
    if cfg.get("model"):
        return Path(cfg["model"])
    return io.default_model_dir() / DEFAULT_MODEL_NAME


def cmd_simulate(cfg) -> int:
    out = io.ensure_dir(cfg["out"])
    try:
        gcfg = GraphSamplerConfig(d=_range(cfg["d"]), indegree_range=_pair(cfg["indegree"]),
                                  bidirected_fraction_range=_pair(cfg["bidirected"]),
                                  seed=int(cfg["seed"]), topology=cfg["topology"])
    except (SimulationError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    count = int(cfg["count"])
    if count < 0:
        raise ConfigError("count must be non-negative")
    items = []
    for k, inst in enumerate(simulate_suite(count, gcfg, int(cfg["n"]), int(cfg["seed"]))):
        stem = f"{k:03d}"
        io.write_csv(inst.data, out / f"data_{stem}.csv")
        io.write_graph(inst.graph, out / f"graph_{stem}.json")
        io.write_graph(inst.mag, out / f"mag_{stem}.json")
        io.write_params(inst.params, out / f"params_{stem}.json")
        items.append({"id": stem, "d": inst.graph.d, "data": f"data_{stem}.csv",
                      "graph": f"graph_{stem}.json", "mag": f"mag_{stem}.json",
                      "params": f"params_{stem}.json", "seed": list(inst.seed)})
    io.write_manifest({"command": "simulate", "config": _jsonable(cfg), "items": items}, out / "manifest.json")
    print(f"wrote {len(items)} datasets to {out}")
    return EXIT_OK


def _load_suite(directory):
    directory = Path(directory)
    man = io.read_manifest(directory / "manifest.json")
    out = []
    for it in man["items"]:
        out.append((it, io.read_csv(directory / it["data"]), io.read_graph(directory / it["mag"])))
    return man, out


def cmd_train_posterior(cfg) -> int:
    from .posterior.cascade import CascadeConfig, infer_posterior, train_cascade

    if cfg.get("corpus"):
        _, suite = _load_suite(cfg["corpus"])
        corpus = [(ds, skeleton_of(mag)) for _, ds, mag in suite]
    else:
        gcfg = GraphSamplerConfig(d=_range(cfg["d"]), seed=int(cfg["seed"]), topology=cfg["topology"])
        from .simulate import generate_corpus

        corpus = generate_corpus(int(cfg["count"]) + int(cfg["holdout"]), gcfg, int(cfg["n"]), int(cfg["seed"]))
    if not corpus:
        raise ConfigError("training corpus is empty")
    n_hold = min(int(cfg["holdout"]), max(len(corpus) - 1, 0))
    train, held = corpus[: len(corpus) - n_hold], corpus[len(corpus) - n_hold:]
    ccfg = CascadeConfig(n_stages=int(cfg["stages"]), max_cond=int(cfg["max_cond"]), seed=int(cfg["seed"]))
    model = train_cascade(train, ccfg, {"config": _jsonable(cfg)})
    path = _model_path(cfg)
    io.ensure_dir(path.parent)
    model.save(path)
    report = {"model": str(path), "n_train": len(train), "n_holdout": len(held)}
    if held:
        qs = [posterior_quality(infer_posterior(model, ds), sk) for ds, sk in held]
        for key in ("auroc", "auprc", "kl"):
            vals = np.array([getattr(q, key) for q in qs], dtype=float)
            report[key] = float(np.nanmean(vals)) if np.isfinite(vals).any() else None
    report_path = Path(cfg.get("report") or str(path) + ".report.json")
    io.write_manifest({"command": "train-posterior", "config": _jsonable(cfg), "report": report}, report_path)
    print(json.dumps(report))
    return EXIT_OK


def cmd_posterior(cfg) -> int:
    from .posterior.cascade import CascadeModel, infer_posterior
    from .posterior.dynamic import AdaptConfig, dynamic_posterior

    data = io.read_csv(cfg["data"])
    model = CascadeModel.load(_model_path(cfg))
    if cfg.get("dynamic_adapt"):
        post = dynamic_posterior(model, data, int(cfg["replicas"]), float(cfg["subsample"]),
                                 np.random.default_rng(int(cfg["seed"])), AdaptConfig(seed=int(cfg["seed"])))
    else:
        post = infer_posterior(model, data)
    io.write_posterior(post, cfg["out"])
    print(f"wrote posterior for {data.d} variables to {cfg['out']}")
    return EXIT_OK


def _abic_cfg(cfg) -> AbicConfig:
    try:
        return AbicConfig(lam=float(cfg["lam"]), omega=float(cfg["omega"]), alm_steps=int(cfg["alm_steps"]),
                          inner_steps=int(cfg["inner_steps"]), inner_maxiter=int(cfg["inner_maxiter"]),
                          seed=int(cfg["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _run_learner(method, data, cfg, posterior=None, allowed=None):
    """Returns ``(mag, trace, params, timed_out)``."""
    timeout = cfg.get("timeout")
    if method == "fci":
        try:
            fcfg = FciConfig(alpha=float(cfg["alpha"]), max_cond_size=int(cfg["max_cond_size"]),
                             use_possible_dsep=bool(cfg.get("possible_dsep")))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return fci_learn(data, fcfg), [], None, False
    acfg = _abic_cfg(cfg)
    if method == "abic":
        res = abic_fit(data, acfg, allowed=allowed, timeout=timeout)
    elif method == "spot":
        try:
            gcfg = GuideConfig(c=float(cfg["guide_c"]), sparsity_unconditional=not cfg.get("no_sparsity_prior"),
                               seed=int(cfg["seed"]), shrink_test=cfg["shrink_test"],
                               draw_scope=cfg["draw_scope"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        res = spot_fit(data, posterior, acfg, gcfg, allowed=allowed, timeout=timeout)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return res.graph, res.trace, res.params, res.timed_out


def _posterior_for(cfg, data):
    if cfg.get("posterior"):
        post = io.read_posterior(cfg["posterior"])
        if post.d != data.d:
            raise ConfigError(f"posterior has {post.d} variables but data has {data.d}")
        return post
    from .posterior.cascade import CascadeModel, infer_posterior

    path = _model_path(cfg)
    if not path.exists():
        raise ConfigError(f"spot needs --posterior or a trained model (looked for {path})")
    return infer_posterior(CascadeModel.load(path), data)


def cmd_learn(cfg) -> int:
    method = cfg["method"]
    if method not in ("abic", "spot", "fci"):
        raise ConfigError(f"unknown method {method!r}")
    data = io.read_csv(cfg["data"])
    out = io.ensure_dir(cfg["out"])
    allowed = None
    if cfg.get("true_skeleton"):
        truth = io.read_graph(cfg["true_skeleton"])
        if truth.d != data.d:
            raise ConfigError("true skeleton and data dimensions differ")
        allowed = truth.adjacency()
    posterior = _posterior_for(cfg, data) if method == "spot" else None
    t0 = time.monotonic()
    g, trace, params, timed_out = _run_learner(method, data, cfg, posterior, allowed)
    _write_learn_outputs(out, g, trace, params)
    status = "timeout" if timed_out else "ok"
    io.write_manifest({"command": "learn", "config": _jsonable(cfg), "status": status,
                       "seconds": time.monotonic() - t0}, out / "manifest.json")
    print(f"{method}: {len(g.directed_edges)} directed, {len(g.bidirected_edges)} bidirected edges ({status})")
    return EXIT_TIMEOUT if timed_out else EXIT_OK


def _write_learn_outputs(out, g, trace, params):
    io.write_graph(g, out / "mag.json")
    io.write_pag(as_pag(g), out / "pag.json")
    io.write_jsonl(trace, out / "trace.jsonl")
    if params is not None:
        io.write_params(params, out / "params.json")


def _read_any_graph(path):
    obj = io._load(path)
    if "edges" in obj and "directed" not in obj:
        return Pag.from_dict(obj)
    return Admg.from_dict(obj)


def _to_pag(g):
    return g if isinstance(g, Pag) else as_pag(g)


def _aggregate(rows, keys, group):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[g] for g in group), []).append(r)
    out = []
    for gk, rs in sorted(groups.items(), key=lambda kv: tuple(str(x) for x in kv[0])):
        rec = dict(zip(group, gk))
        rec["count"] = len(rs)
        for k in keys:
            vals = np.array([r[k] for r in rs], dtype=float)
            rec[f"{k}_mean"] = float(vals.mean())
            rec[f"{k}_std"] = float(vals.std())
        out.append(rec)
    return out


METRIC_KEYS = ["skeleton_f1", "skeleton_tpr", "skeleton_fdr", "arrowhead_f1", "arrowhead_tpr",
               "arrowhead_fdr", "tail_f1", "tail_tpr", "tail_fdr", "shd"]


def _write_csv_records(records, path):
    import csv

    if not records:
        Path(path).write_text("")
        return
    cols = list(records[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r)


def _metric_row(pred, truth) -> dict:
    P, T = _to_pag(pred), _to_pag(truth)
    row = {k: v for k, v in pag_metrics(P, T).flat().items() if k.split("_")[-1] in ("f1", "tpr", "fdr")}
    row["shd"] = shd(P, T)
    return row


def cmd_eval(cfg) -> int:
    preds, truths = cfg.get("pred") or [], cfg.get("truth") or []
    if len(preds) != len(truths) or not preds:
        raise ConfigError("eval needs equally many --pred and --truth files (at least one)")
    rows = []
    for p, t in zip(preds, truths):
        row = {"pred": p, "truth": t, "method": cfg.get("label") or "pred"}
        row.update(_metric_row(_read_any_graph(p), _read_any_graph(t)))
        rows.append(row)
    agg = _aggregate(rows, METRIC_KEYS, ["method"])
    out = io.ensure_dir(cfg["out"])
    _write_csv_records(rows, out / "metrics.csv")
    _write_csv_records(agg, out / "summary.csv")
    io.write_manifest({"command": "eval", "config": _jsonable(cfg), "rows": rows, "summary": agg},
                      out / "metrics.json")
    print(json.dumps(agg))
    return EXIT_OK


def _bench_job(job):
    method, item, data_path, mag_path, cfg, out_dir = job
    data = io.read_csv(data_path)
    truth = io.read_graph(mag_path)
    post = _posterior_for(cfg, data) if method == "spot" else None
    t0 = time.monotonic()
    status = "ok"
    try:
        g, trace, params, timed_out = _run_learner(method, data, cfg, post)
        if timed_out:
            status = "timeout"
    except AbicDivergenceError:
        return {"method": method, "id": item, "d": data.d, "status": "diverged"}
    job_dir = io.ensure_dir(Path(out_dir) / method / item)
    _write_learn_outputs(job_dir, g, trace, params)
    row = {"method": method, "id": item, "d": data.d, "status": status, "seconds": time.monotonic() - t0}
    row.update(_metric_row(g, mag_to_pag(truth)))
    return row


def cmd_bench(cfg) -> int:
    suite_dir = Path(cfg["suite"])
    man = io.read_manifest(suite_dir / "manifest.json")
    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    for m in methods:
        if m not in ("abic", "spot", "fci"):
            raise ConfigError(f"unknown method {m!r}")
    out = io.ensure_dir(cfg["out"])
    jobs = [(m, it["id"], str(suite_dir / it["data"]), str(suite_dir / it["mag"]), cfg, str(out))
            for it in man["items"] for m in methods]
    if not jobs:
        raise ConfigError("benchmark suite has no datasets")
    n_jobs = max(1, int(cfg["jobs"]))
    if n_jobs == 1:
        rows = [_bench_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(n_jobs) as ex:
            rows = list(ex.map(_bench_job, jobs))
    ok = [r for r in rows if r["status"] != "diverged"]
    agg = _aggregate(ok, METRIC_KEYS, ["method"])
    per_d = _aggregate(ok, METRIC_KEYS, ["method", "d"])
    _write_csv_records(rows, out / "metrics.csv")
    _write_csv_records(agg, out / "summary.csv")
    _write_csv_records(per_d, out / "summary_by_d.csv")
    plot = {m: {"d": [r["d"] for r in per_d if r["method"] == m],
                "skeleton_f1": [r["skeleton_f1_mean"] for r in per_d if r["method"] == m],
                "arrowhead_f1": [r["arrowhead_f1_mean"] for r in per_d if r["method"] == m],
                "tail_f1": [r["tail_f1_mean"] for r in per_d if r["method"] == m]} for m in methods}
    io.write_manifest(plot, out / "plot_data.json")
    io.write_manifest({"command": "bench", "config": _jsonable(cfg), "summary": agg}, out / "manifest.json")
    for r in agg:
        print(f"{r['method']:5s} skeleton {r['skeleton_f1_mean']:.3f}  arrowhead {r['arrowhead_f1_mean']:.3f}  "
              f"tail {r['tail_f1_mean']:.3f}  (n={r['count']})")
    if any(r["status"] == "diverged" for r in rows):
        return EXIT_DIVERGED
    if any(r["status"] == "timeout" for r in rows):
        return EXIT_TIMEOUT
    return EXIT_OK


def _jsonable(cfg):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spotmag", description="Causal discovery with ancestral ADMGs and skeleton posteriors.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (flags override it)")
        return sp

    s = common(sub.add_parser("simulate", help="generate a synthetic suite"))
    s.add_argument("--d", help="node count or range lo..hi (default 20..50)")
    s.add_argument("--n", type=int, help="samples per dataset (default 1000)")
    s.add_argument("--count", type=int, help="number of datasets (default 10)")
    s.add_argument("--seed", type=int, help="suite seed (default 0)")
    s.add_argument("--indegree", help="average indegree range lo,hi (default 1,1.5)")
    s.add_argument("--bidirected", help="bidirected edge fraction range lo,hi (default 0.05,0.15)")
    s.add_argument("--topology", choices=["er", "sf"], help="random graph family (default er)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = common(sub.add_parser("train-posterior", help="train the skeleton-posterior cascade"))
    s.add_argument("--corpus", help="suite directory from `simulate` (default: simulate inline)")
    s.add_argument("--count", type=int, help="inline corpus size (default 100)")
    s.add_argument("--d", help="inline corpus node range (default 20..50)")
    s.add_argument("--n", type=int, help="inline corpus sample size (default 1000)")
    s.add_argument("--topology", choices=["er", "sf"], help="inline corpus graph family (default er)")
    s.add_argument("--holdout", type=int, help="datasets held out for the report (default 10)")
    s.add_argument("--stages", type=int, help="cascade depth (default 3)")
    s.add_argument("--max-cond", type=int, help="largest conditioning-set size in features (default 3)")
    s.add_argument("--seed", type=int, help="seed (default 0)")
    s.add_argument("--model", help=f"output model file (default ${io.MODEL_DIR_ENV}/{DEFAULT_MODEL_NAME})")
    s.add_argument("--report", help="held-out report path (default <model>.report.json)")
    s.set_defaults(func=cmd_train_posterior)

    s = common(sub.add_parser("posterior", help="infer a skeleton posterior for a dataset"))
    s.add_argument("--data", required=True, help="CSV with a header row")
    s.add_argument("--model", help=f"model file (default ${io.MODEL_DIR_ENV}/{DEFAULT_MODEL_NAME})")
    s.add_argument("--dynamic-adapt", action="store_true", default=None,
                   help="bootstrap a dataset-specific corpus and adapt the model first")
    s.add_argument("--replicas", type=int, help="bootstrap replicas for adaptation (default 20)")
    s.add_argument("--subsample", type=float, help="bootstrap row fraction (default 0.9)")
    s.add_argument("--seed", type=int, help="seed (default 0)")
    s.add_argument("--out", required=True, help="output file (.json or CSV matrix)")
    s.set_defaults(func=cmd_posterior)

    def learner_flags(sp):
        sp.add_argument("--guide-c", type=float, help="temperature constant c for spot (default 0.1)")
        sp.add_argument("--no-sparsity-prior", action="store_true", default=None,
                        help="spot: do not accept moves toward zero unconditionally")
        sp.add_argument("--shrink-test", choices=("step", "gradient"),
                        help="spot: how a move toward zero is detected (default step)")
        sp.add_argument("--draw-scope", choices=("alm_step", "inner_step"),
                        help="spot: share acceptance draws per ALM step or redraw per inner step "
                             "(default alm_step)")
        sp.add_argument("--posterior", help="posterior file for spot (default: infer with --model)")
        sp.add_argument("--model", help="cascade model used when spot has no --posterior")
        sp.add_argument("--timeout", type=float, help="seconds before returning the best-so-far graph")
        sp.add_argument("--lam", type=float, help="L1 weight (default 0.05)")
        sp.add_argument("--omega", type=float, help="edge threshold (default 0.05)")
        sp.add_argument("--alm-steps", type=int, help="outer ALM steps (default 20)")
        sp.add_argument("--inner-steps", type=int, help="pseudo-variable refreshes per outer step (default 10)")
        sp.add_argument("--inner-maxiter", type=int, help="L-BFGS-B iterations per inner step (default 100)")
        sp.add_argument("--alpha", type=float, help="FCI significance level (default 0.01)")
        sp.add_argument("--max-cond-size", type=int, help="FCI largest conditioning set (default 4)")
        sp.add_argument("--possible-dsep", action="store_true", default=None,
                        help="FCI: run the possible-d-separation stage")
        sp.add_argument("--seed", type=int, help="seed (default 0)")

    s = common(sub.add_parser("learn", help="learn a graph with abic, spot or fci"))
    s.add_argument("--method", choices=["abic", "spot", "fci"], help="learner (default abic)")
    s.add_argument("--data", required=True, help="CSV with a header row")
    s.add_argument("--true-skeleton", help="graph JSON whose skeleton constrains abic/spot")
    s.add_argument("--out", required=True, help="output directory")
    learner_flags(s)
    s.set_defaults(func=cmd_learn)

    s = common(sub.add_parser("eval", help="score predicted graphs against ground truth"))
    s.add_argument("--pred", nargs="+", help="predicted MAG or PAG JSON files")
    s.add_argument("--truth", nargs="+", help="ground-truth MAG or PAG JSON files, same order")
    s.add_argument("--label", help="method label for the summary")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_eval)

    s = common(sub.add_parser("bench", help="run learners over a simulated suite and aggregate"))
    s.add_argument("--suite", required=True, help="suite directory from `simulate`")
    s.add_argument("--methods", help="comma-separated learners (default fci,abic,spot)")
    s.add_argument("--jobs", type=int, help="parallel fits (default 1)")
    s.add_argument("--out", required=True, help="output directory")
    learner_flags(s)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    del args.verbose
    try:
        cfg = _resolve(args)
        return args.func(cfg)
    except (ConfigError, io.FormatError, GraphError, SimulationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AbicDivergenceError as exc:
        print(f"error: learner diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
