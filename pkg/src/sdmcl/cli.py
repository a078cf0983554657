"""``sdmcl`` command-line front end.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

import argparse
import glob
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as config_mod
from . import data_io, numerics, optimizers, sdm
from .errors import ConfigError, SdmclError

log = logging.getLogger("sdmcl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MNIST_ENV = "SDMCL_MNIST_DIR"


# -- data ---------------------------------------------------------------------


def _limit(ds, count):
    return ds.head(count) if count and count < len(ds) else ds


def load_data(data_cfg):
    """Return ``(train, val)`` datasets described by a ``data`` config block."""
    if "train_embeddings" in data_cfg:
        train = data_io.parse_embeddings(data_cfg["train_embeddings"])
        val = data_io.parse_embeddings(data_cfg.get("val_embeddings", data_cfg["train_embeddings"]))
    elif "train_images" in data_cfg:
        train = data_io.parse_idx(data_cfg["train_images"], data_cfg["train_labels"])
        val = data_io.parse_idx(data_cfg["val_images"], data_cfg["val_labels"])
    else:
        root = data_cfg.get("mnist_dir") or os.environ.get(MNIST_ENV)
        if not root:
            raise ConfigError(f"no data given: set data.mnist_dir, IDX/embedding paths or ${MNIST_ENV}")
        train = data_io.load_mnist(root, "train")
        val = data_io.load_mnist(root, "test")
    return _limit(train, data_cfg.get("max_train")), _limit(val, data_cfg.get("max_val"))


# -- overrides ----------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args):
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    if getattr(args, "seed", None):
        try:
            out["tasks.seeds"] = [int(s) for s in args.seed.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seed expects a comma-separated list of integers, got {args.seed!r}") from None
    if getattr(args, "out", None):
        out["output_dir"] = args.out
    return out


def _resolved(args):
    cfg = config_mod.load(args.config, _overrides(args))
    print(config_mod.dumps(cfg))
    return cfg


# -- continual / oracle / pretrain ----------------------------------------------


def _one_seed(job):
    from .continual import run_continual
    from .sdmlp import load_checkpoint

    cfg, seed, oracle, checkpoint = job
    deterministic = cfg.get("deterministic") or numerics.deterministic_mode()
    with numerics.blas_threads(deterministic):
        train, val = load_data(cfg.get("data", {}))
        pretrain = None
        if cfg.get("pretrain"):
            pdata = cfg["pretrain"].get("data")
            pretrain = load_data(pdata)[0] if pdata else train
        model = None
        if checkpoint:
            model = load_checkpoint(checkpoint, numerics.resolve_dtype(cfg["training"]["precision"]), seed)
        mlog = run_continual(cfg, train, val, seed, pretrain=pretrain, oracle=oracle, model=model)
    stem = os.path.join(cfg["output_dir"], f"{_slug(mlog.method)}_seed{seed}")
    data_io.write_results(mlog, stem + ".jsonl")
    np.savetxt(stem + ".class_counts.csv", mlog.class_counts, fmt="%d", delimiter=",")
    mlog.model = None
    return mlog


def _slug(text):
    return "".join(ch if ch.isalnum() else "-" for ch in text)


def _run_seeds(cfg, oracle, jobs, checkpoint=None):
    from .continual import summarize

    os.makedirs(cfg["output_dir"], exist_ok=True)
    data_io.atomic_write_text(os.path.join(cfg["output_dir"], "config.resolved.json"), config_mod.dumps(cfg) + "\n")
    work = [(cfg, seed, oracle, checkpoint) for seed in cfg["tasks"]["seeds"]]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(_one_seed, work))
    else:
        logs = [_one_seed(job) for job in work]
    summary = summarize(logs)
    stem = os.path.join(cfg["output_dir"], _slug(summary["method"]))
    data_io.atomic_write_text(stem + ".summary.json", json.dumps(summary, indent=2) + "\n")
    write_table(os.path.join(cfg["output_dir"], "table.csv"), [summary])
    print(json.dumps(summary))
    return EXIT_OK


TABLE_HEADER = ["method", "neurons", "k", "seeds", "final_acc_mean", "final_acc_sem"]


def write_table(path, summaries):
    rows = []
    for s in summaries:
        rows.append([s["method"], s["neurons"], s["k"], " ".join(map(str, s["seeds"])),
                     f"{s['final_acc_mean']:.4f}", f"{s['final_acc_sem']:.4f}"])
    data_io.write_csv(path, TABLE_HEADER, rows)


def cmd_continual(args):
    return _run_seeds(_resolved(args), args.oracle, args.jobs, args.init_checkpoint)


def cmd_oracle(args):
    return _run_seeds(_resolved(args), True, args.jobs, args.init_checkpoint)


def cmd_pretrain(args):
    from .continual import build_model
    from .sdmlp import evaluate, save_checkpoint, train_epoch

    cfg = _resolved(args)
    if cfg["model"]["kind"] != "sdmlp":
        raise ConfigError("pretrain produces SDMLP checkpoints; model.kind must be sdmlp")
    pcfg = cfg.get("pretrain") or {"epochs": cfg["tasks"]["epochs_per_task"]}
    seed = cfg["tasks"]["seeds"][0]
    with numerics.blas_threads(cfg.get("deterministic") or numerics.deterministic_mode()):
        data_cfg = pcfg.get("data") or cfg.get("data", {})
        train, val = load_data(data_cfg)
        model = build_model(cfg["model"], train.dim, train.num_classes, seed, numerics.resolve_dtype(cfg["training"]["precision"]))
        opt = optimizers.OptimizerConfig(**pcfg.get("optimizer", cfg["optimizer"]))
        state = optimizers.OptimizerState()
        rng = numerics.make_rng([seed, 1])
        X = model.preprocess(train.features)
        for epoch in range(pcfg["epochs"]):
            stats = train_epoch(model, (X, train.labels), opt, state, cfg["training"]["batch_size"], rng, normalized=True)
            log.info("pretrain epoch %d loss %.4f train acc %.4f k=%d", epoch, stats.loss, stats.accuracy, model.k_t)
        acc = evaluate(model, val)
    os.makedirs(cfg["output_dir"], exist_ok=True)
    path = args.checkpoint or os.path.join(cfg["output_dir"], "pretrained.sdmlp")
    save_checkpoint(model, path)
    print(json.dumps({"checkpoint": path, "val_acc": acc, "epochs": pcfg["epochs"]}))
    return EXIT_OK


# -- probe / sdm-analyze / gaba-ode --------------------------------------------


PROBE_HEADER = ["step", "optimizer", "delta", "m", "v"]


def cmd_probe(args):
    if args.schedule:
        try:
            with open(args.schedule) as fh:
                schedule = optimizers.InjectionSchedule.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"schedule file not found: {args.schedule}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid schedule: {exc}") from None
    else:
        schedule = optimizers.sparse_injection_schedule(args.grad, args.steps)
    kinds = optimizers.KINDS if args.optimizer == "all" else [args.optimizer]
    rows = []
    traces = {}
    for kind in kinds:
        trace = optimizers.stale_momentum_probe(optimizers.OptimizerConfig(kind=kind, lr=1.0), schedule)
        traces[kind] = trace
        rows += [[r["step"], kind, repr(float(r["delta"])), repr(float(r["m"])), repr(float(r["v"]))] for r in trace]
    _emit_csv(args.out, PROBE_HEADER, rows)
    if args.plot:
        from . import plotting

        plotting.probe_deltas(traces, args.plot)
    return EXIT_OK


def _emit_csv(path, header, rows):
    if path:
        data_io.write_csv(path, header, rows)
    else:
        import csv

        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def intersection_rows(n, d, beta):
    curves = [sdm.intersection_curve(n, d, wt, beta) for wt in ("binary", "linear", "exp")]
    return [[dv, b, lin, ex] for (dv, b), (_, lin), (_, ex) in zip(*curves)]


def cmd_sdm_analyze(args):
    if not 0 <= args.d <= args.n:
        raise ConfigError("need 0 <= d <= n")
    if args.n > 512:
        raise ConfigError("n must be at most 512")
    if args.raw:
        rows = []
        for dv in range(args.n + 1):
            vals = [sdm.intersection_weighted_sum(sdm.IntersectionQuery(args.n, args.d, dv, wt, args.beta))
                    for wt in ("binary", "linear", "exp")]
            rows.append([dv, *vals])
    else:
        rows = intersection_rows(args.n, args.d, args.beta)
    _emit_csv(args.out, ["d_v", "binary", "linear", "exp"], [[r[0], *(repr(float(v)) for v in r[1:])] for r in rows])
    if args.plot:
        from . import plotting

        plotting.intersection_curves(rows, args.plot, f"n={args.n}, d={args.d}")
    return EXIT_OK


def cmd_gaba_ode(args):
    cfg = sdm.make_ei_config(args.dim, r_E=args.r_e, r_I=args.r_i, seed=args.seed)
    rng = numerics.make_rng([args.seed, 7])
    inputs = numerics.normalize_rows(rng.uniform(0, 1, size=(args.inputs, args.dim)) ** 4)
    if args.b_i:
        b_values = [float(v) for v in args.b_i.split(",")]
    else:
        b_values = [sdm.tune_inhibitory_threshold(cfg, inputs[: min(10, len(inputs))], args.target, 0.0, 100.0, iters=14)]
    import dataclasses

    rows = []
    all_counts = []
    for b_i in b_values:
        counts = sdm.active_counts(dataclasses.replace(cfg, b_i=b_i), inputs)
        all_counts.append(counts)
        rows += [[repr(b_i), idx, int(c)] for idx, c in enumerate(counts)]
        print(f"b_i={b_i:.4f} mean active {counts.mean():.1f} cv {counts.std() / max(counts.mean(), 1e-12):.3f}", file=sys.stderr)
    _emit_csv(args.out, ["b_i", "input", "active"], rows)
    if args.plot:
        from . import plotting

        plotting.active_counts(b_values, all_counts, args.plot)
    return EXIT_OK


# -- report -----------------------------------------------------------------------


def cmd_report(args):
    from . import plotting

    paths = sorted(glob.glob(os.path.join(args.results, "*_seed*.jsonl")))
    if not paths:
        raise ConfigError(f"no *_seed*.jsonl results under {args.results}")
    out = args.out or args.results
    os.makedirs(out, exist_ok=True)
    runs = {}
    summaries = {}
    for path in paths:
        records, summary = data_io.read_results(path)
        method = summary["method"]
        runs.setdefault(method, []).append(records)
        agg = summaries.setdefault(method, {"method": method, "neurons": summary["neurons"], "k": summary["k"], "seeds": [], "acc": []})
        agg["seeds"] += summary["seeds"]
        agg["acc"].append(summary["final_acc_mean"])
        plotting.per_task_accuracy(records, os.path.join(out, os.path.basename(path)[:-6] + ".per_task.png"), method)
    table = []
    for agg in summaries.values():
        acc = np.array(agg.pop("acc"), dtype=float)
        agg["final_acc_mean"] = float(acc.mean())
        agg["final_acc_sem"] = float(acc.std(ddof=1) / np.sqrt(len(acc))) if len(acc) > 1 else 0.0
        table.append(agg)
    write_table(os.path.join(out, "report.csv"), sorted(table, key=lambda s: -s["final_acc_mean"]))
    # per-epoch curves as a long-format CSV next to the figure
    rows = []
    for method, seeds in sorted(runs.items()):
        for i, records in enumerate(seeds):
            for r in records:
                rows.append([method, i, r["phase"], r["task"], r["epoch"], r["global_epoch"], r["overall_acc"], r["dead_fraction"], r["k_t"]])
    data_io.write_csv(os.path.join(out, "curves.csv"),
                      ["method", "run", "phase", "task", "epoch", "global_epoch", "overall_acc", "dead_fraction", "k_t"], rows)
    fig = plotting.accuracy_curves(runs, os.path.join(out, "accuracy.png"))
    print(json.dumps({"figures": [fig], "table": os.path.join(out, "report.csv"), "methods": sorted(runs)}))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="sdmcl", description="SDM-style MLPs for class-incremental continual learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p):
        p.add_argument("config", help="JSON run config")
        p.add_argument("--seed", help="comma-separated seeds, overrides tasks.seeds")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key (JSON value)")
        p.add_argument("--out", help="output directory, overrides output_dir")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes over seeds")
        p.add_argument("--init-checkpoint", help="start from an SDMLP checkpoint instead of a fresh model")

    p = sub.add_parser("continual", help="run the split-task protocol")
    run_args(p)
    p.add_argument("--oracle", action="store_true", help="train one task containing every class")
    p.set_defaults(func=cmd_continual)

    p = sub.add_parser("oracle", help="train on all classes at once")
    run_args(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("pretrain", help="train an SDMLP through its Top-K schedule and save a checkpoint")
    p.add_argument("config")
    p.add_argument("--seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out")
    p.add_argument("--checkpoint", help="checkpoint path (default <output_dir>/pretrained.sdmlp)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="single-weight sparse gradient probe of the optimizers")
    p.add_argument("--optimizer", default="all", choices=["all", *optimizers.KINDS])
    p.add_argument("--schedule", help='JSON {"injections": [[step, grad], ...], "total_steps": N}')
    p.add_argument("--grad", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--plot", help="optional PNG path")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sdm-analyze", help="circle-intersection curves")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--d", type=int, default=11)
    p.add_argument("--beta", type=float, default=sdm.DEFAULT_EXP_BETA)
    p.add_argument("--raw", action="store_true", help="unnormalized weighted sums")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_sdm_analyze)

    p = sub.add_parser("gaba-ode", help="active counts of the excitatory/inhibitory rate model")
    p.add_argument("--dim", type=int, default=784)
    p.add_argument("--r-e", type=int, default=1000)
    p.add_argument("--r-i", type=int, default=10)
    p.add_argument("--inputs", type=int, default=50)
    p.add_argument("--b-i", help="comma-separated inhibitory thresholds (default: tune for --target)")
    p.add_argument("--target", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_gaba_ode)

    p = sub.add_parser("report", help="figures and tables from a results directory")
    p.add_argument("results")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SdmclError, OSError, ValueError, ArithmeticError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
