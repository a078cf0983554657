"""Class-incremental split-task harness and post-hoc diagnostics."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics, optimizers
from .baselines import FlyModel, ImportanceState, MlpBaseline, estimate_importance
from .errors import ConfigError, IndivisibleClasses
from .sdmlp import Ablations, SdmlpModel, TopKConfig, train_epoch

log = logging.getLogger(__name__)


@dataclass
class TaskStream:
    class_partition: list  # ordered disjoint class tuples
    seed: object = None
    epochs_per_task: int = 1

    def __post_init__(self):
        seen = [c for part in self.class_partition for c in part]
        if len(seen) != len(set(seen)):
            raise ValueError("task class subsets must be disjoint")

    def __len__(self):
        return len(self.class_partition)

    def __iter__(self):
        return iter(self.class_partition)


def split_dataset(dataset, classes_per_task, seed=None, epochs_per_task=1):
    """Partition the classes of ``dataset`` into tasks of ``classes_per_task``.

    ``seed=None`` keeps the natural class order (0,1), (2,3), ...; an integer
    seed shuffles the class labels first.
    """
    num_classes = dataset if isinstance(dataset, int) else dataset.num_classes
    if classes_per_task < 1 or num_classes % classes_per_task:
        raise IndivisibleClasses(f"{num_classes} classes cannot be split into tasks of {classes_per_task}")
    classes = np.arange(num_classes)
    if seed is not None:
        classes = numerics.make_rng(seed).permutation(classes)
    parts = [tuple(int(c) for c in classes[i : i + classes_per_task]) for i in range(0, num_classes, classes_per_task)]
    return TaskStream(parts, seed, epochs_per_task)


@dataclass
class MetricsLog:
    method: str
    neurons: int
    k: int
    seed: int
    records: list = field(default_factory=list)
    class_counts: np.ndarray = None
    tasks: list = field(default_factory=list)

    def add(self, **record):
        self.records.append(record)

    def final(self):
        return self.records[-1] if self.records else None

    @property
    def final_accuracy(self):
        last = self.final()
        return float("nan") if last is None else last["overall_acc"]

    def task_end_records(self):
        """Last record of every continual task, in task order."""
        ends = {}
        for rec in self.records:
            if rec["phase"] == "task":
                ends[rec["task"]] = rec
        return [ends[t] for t in sorted(ends)]

    def summary(self):
        return summarize([self])


def summarize(logs):
    """Cross-seed summary: ``{method, neurons, k, seeds, final_acc_mean, final_acc_sem}``."""
    if not logs:
        return {"method": None, "neurons": 0, "k": 0, "seeds": [], "final_acc_mean": None, "final_acc_sem": None}
    accs = np.array([lg.final_accuracy for lg in logs], dtype=float)
    sem = float(accs.std(ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else 0.0
    first = logs[0]
    return {
        "method": first.method,
        "neurons": first.neurons,
        "k": first.k,
        "seeds": [lg.seed for lg in logs],
        "final_acc_mean": float(accs.mean()) if len(accs) else None,
        "final_acc_sem": sem,
    }


# -- model construction ---------------------------------------------------------


def build_model(model_cfg, n, o, seed, dtype=np.float64):
    """Instantiate a model from the ``model`` block of a run config."""
    kind = model_cfg["kind"]
    r = model_cfg.get("r", 1000)
    if kind == "sdmlp":
        topk = TopKConfig(
            k_target=model_cfg.get("k_target", 10),
            k_max=model_cfg.get("k_max", r),
            s=model_cfg.get("s", 10),
            mode=model_cfg.get("mode", "anneal_subtract"),
            detach_inhibition=model_cfg.get("detach_inhibition", False),
        )
        ablations = Ablations(**model_cfg.get("ablations", {}))
        return SdmlpModel(n, r, o, topk, ablations, seed=seed, dtype=dtype)
    if kind in ("relu", "topk"):
        activation = "relu" if kind == "relu" else "topk_" + model_cfg.get("topk_mode", "subtract")
        return MlpBaseline(
            n, r, o, activation, k=model_cfg.get("k_target"), dropout=model_cfg.get("dropout", 0.0),
            seed=seed, dtype=dtype,
        )
    if kind == "flymodel":
        return FlyModel(
            n, o, r_kc=model_cfg.get("r", 1000), k=model_cfg.get("k_target"), q=model_cfg.get("q", 32),
            lr=model_cfg.get("lr", 0.005), decay=model_cfg.get("decay", False), seed=seed, dtype=dtype,
        )
    raise ConfigError(f"unknown model kind {kind!r}")


def method_name(cfg):
    model = cfg["model"]
    name = model["kind"]
    reg = cfg.get("regularizer", {}).get("method", "none")
    if reg != "none":
        name += "+" + reg
    if model["kind"] != "flymodel":
        name += "/" + cfg["optimizer"]["kind"]
    return name


# -- evaluation -------------------------------------------------------------------


def _scan(model, X, chunk=2048):
    """Logits and an ever-active flag per neuron over preprocessed rows ``X``."""
    preds = []
    ever = np.zeros(model.r, dtype=bool)
    for start in range(0, len(X), chunk):
        xb = X[start : start + chunk]
        if isinstance(model, FlyModel):
            post = model.code(xb)
            logits = post @ model.V.T
        else:
            trace = model.forward(xb, normalized=True)
            post, logits = trace.post, trace.logits
        preds.append(np.argmax(logits, axis=1))
        ever |= (post > 0).any(axis=0)
    return (np.concatenate(preds) if preds else np.zeros(0, dtype=int)), ever


@dataclass
class Evaluation:
    overall: float
    per_task: list
    dead_fraction: float


def evaluate_tasks(model, X, y, stream):
    preds, ever = _scan(model, X)
    hits = preds == y
    per_task = []
    for classes in stream:
        mask = np.isin(y, classes)
        per_task.append(float(hits[mask].mean()) if mask.any() else float("nan"))
    return Evaluation(float(hits.mean()), per_task, float(1 - ever.mean()))


def dead_neuron_fraction(model, data):
    """Fraction of neurons never active for any row of ``data``."""
    X = model.preprocess(data.features if hasattr(data, "features") else data)
    return float(1 - _scan(model, X)[1].mean())


def class_activation_counts(model, data, chunk=2048):
    """(r x classes) count of samples of each class that activated each neuron."""
    X = model.preprocess(data.features)
    counts = np.zeros((model.r, data.num_classes))
    for start in range(0, len(X), chunk):
        xb = X[start : start + chunk]
        post = model.code(xb) if isinstance(model, FlyModel) else model.forward(xb, normalized=True).post
        np.add.at(counts.T, data.labels[start : start + chunk], (post > 0).astype(float))
    return counts


@dataclass
class EntropyReport:
    entropy: np.ndarray  # nats per neuron (nan for never-active neurons)
    share: np.ndarray  # share of all activations
    weighted_mean: float


def entropy_from_counts(counts):
    counts = np.asarray(counts, dtype=float)
    totals = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / totals[:, None]
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    entropy = np.where(totals > 0, terms.sum(axis=1), np.nan)
    grand = totals.sum()
    share = totals / grand if grand > 0 else np.zeros_like(totals)
    weighted = float(np.sum(share[totals > 0] * entropy[totals > 0]))
    return EntropyReport(entropy, share, weighted)


def activation_entropy_report(model, data):
    """Per-neuron class entropy of activations and the activation-weighted mean."""
    return entropy_from_counts(class_activation_counts(model, data))


# -- training orchestration -------------------------------------------------------


def _optimizer(cfg_block):
    return optimizers.OptimizerConfig(**cfg_block)


def _train_phase(model, X, y, epochs, opt_cfg, rng, batch_size, regularizer=None, counts=None):
    state = optimizers.OptimizerState()
    for _ in range(epochs):
        yield train_epoch(model, (X, y), opt_cfg, state, batch_size, rng, regularizer, counts, normalized=True)


def run_continual(cfg, train, val, seed, pretrain=None, oracle=False, model=None, on_epoch=None):
    """Run one seed of the protocol described by the resolved config ``cfg``.

    Optional pretraining (with the Top-K schedule) is followed by a reset of the
    output weights and then one training phase per task on that task's samples
    only, evaluating on the whole of ``val`` after every epoch. A ``model``
    passed in (e.g. loaded from a checkpoint) replaces the one the config builds.
    ``on_epoch(model, phase, task, epoch)`` is called after every training epoch.
    """
    tcfg = cfg["tasks"]
    training = cfg.get("training", {})
    dtype = numerics.resolve_dtype(training.get("precision", "float32"))
    batch_size = training.get("batch_size", 128)
    if model is None:
        model = build_model(cfg["model"], train.dim, train.num_classes, seed, dtype)
    rng = numerics.make_rng([seed, 1])
    if oracle:
        stream = TaskStream([tuple(range(train.num_classes))], None, tcfg["epochs_per_task"])
    else:
        stream = split_dataset(train, tcfg.get("classes_per_task", 2), tcfg.get("class_seed"), tcfg["epochs_per_task"])
    log_ = MetricsLog(method_name(cfg) + ("/oracle" if oracle else ""), model.r, model.k_t, seed)
    log_.tasks = [list(c) for c in stream]
    log_.class_counts = np.zeros((model.r, train.num_classes))
    Xval = model.preprocess(val.features)
    yval = val.labels
    opt_cfg = None if isinstance(model, FlyModel) else _optimizer(cfg["optimizer"])

    def record(phase, task, epoch, stats=None):
        ev = evaluate_tasks(model, Xval, yval, stream)
        log_.add(
            phase=phase, task=task, epoch=epoch, global_epoch=model.epoch, overall_acc=ev.overall,
            per_task_acc=ev.per_task, dead_fraction=ev.dead_fraction, k_t=int(model.k_t),
            loss=None if stats is None else stats.loss, train_acc=None if stats is None else stats.accuracy,
        )

    started = time.perf_counter()
    if pretrain is not None and cfg.get("pretrain"):
        pcfg = cfg["pretrain"]
        popt = _optimizer(pcfg.get("optimizer", cfg["optimizer"]))
        Xp = model.preprocess(pretrain.features)
        for epoch, stats in enumerate(_train_phase(model, Xp, pretrain.labels, pcfg["epochs"], popt, rng, batch_size)):
            log.debug("pretrain epoch %d loss %.4f", epoch, stats.loss)
            if on_epoch is not None:
                on_epoch(model, "pretrain", -1, epoch)
        model.reset_output()
        record("pretrain", -1, pcfg["epochs"] - 1)

    reg_cfg = cfg.get("regularizer", {"method": "none"})
    imp = None
    if reg_cfg.get("method", "none") != "none":
        imp = ImportanceState(reg_cfg["method"], reg_cfg.get("lambda_reg", 1.0), reg_cfg.get("beta", 1.0), reg_cfg.get("xi", 1e-3))

    eval_every = training.get("eval_every", 1)
    for t, classes in enumerate(stream):
        task = train.with_classes(classes)
        assert set(np.unique(task.labels)) <= set(classes), "task data leaked other classes"
        Xt = model.preprocess(task.features)
        if isinstance(model, FlyModel):
            model.train(Xt, task.labels)
            if on_epoch is not None:
                on_epoch(model, "task", t, 0)
            record("task", t, 0)
            continue
        if imp is not None:
            imp.begin_task(model.params)
        epochs = stream.epochs_per_task
        phase = _train_phase(model, Xt, task.labels, epochs, opt_cfg, rng, batch_size, imp, log_.class_counts)
        for epoch, stats in enumerate(phase):
            if on_epoch is not None:
                on_epoch(model, "task", t, epoch)
            if (epoch + 1) % eval_every == 0 or epoch == epochs - 1:
                record("task", t, epoch, stats)
        if epochs == 0:
            record("task", t, -1)
        if imp is not None:
            estimate_importance(imp, model, Xt, task.labels)
    log.info("%s seed %d finished in %.1fs: final acc %.4f", log_.method, seed, time.perf_counter() - started, log_.final_accuracy)
    log_.model = model
    return log_
