"""Training loop over a fixed set of offline subgraphs, and evaluation."""

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .checkpoint import save_checkpoint
from .energy import EnergyConfig
from .graph import GraphError
from .model import ModelParams, backward, forward_subgraph, predict
from .optim import make_optimizer
from .rng import stream
from .unfold import SummaryState, online_mean_update


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainRunConfig:
    epochs: int = 30
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    hidden: int = 32
    dropout: float = 0.2
    optimizer: str = "adam"
    lr: float = 1e-3
    schedule: str = "inv_sqrt"
    weight_decay: float = 0.0
    eval_every: int = 1
    seed: int = 0
    checkpoint_path: Optional[str] = None
    checkpoint_every: int = 0
    mutate_eval: bool = False
    record_energy: bool = True
    dry_run: bool = False
    header_extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.hidden < 1 or not 0.0 <= self.dropout < 1.0:
            raise ValueError("hidden must be >= 1 and dropout in [0, 1)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class MetricsLog:
    steps: list = field(default_factory=list)      # (epoch, step, loss)
    evals: list = field(default_factory=list)      # (epoch, step, acc_train, acc_val, acc_test)
    energy: list = field(default_factory=list)     # (epoch, layer, energy, feasible_fraction)
    epoch_times: list = field(default_factory=list)

    def epoch_losses(self):
        out = {}
        for e, _, loss in self.steps:
            out.setdefault(e, []).append(loss)
        return {e: float(np.mean(v)) for e, v in out.items()}

    def last_accuracy(self, split="val"):
        col = {"train": 2, "val": 3, "test": 4}[split]
        return self.evals[-1][col] if self.evals else float("nan")

    def write_csv(self, path):
        """Deterministic metrics: one row per step and one per evaluation."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("kind", "epoch", "step", "loss", "acc_train", "acc_val", "acc_test"))
            rows = [(e, s, 0, ("step", e, s, repr(l), "", "", "")) for e, s, l in self.steps]
            rows += [(e, s, 1, ("eval", e, s, "", _fmt(a), _fmt(b), _fmt(c))) for e, s, a, b, c in self.evals]
            for *_, row in sorted(rows, key=lambda r: r[:3]):
                w.writerow(row)

    def write_energy_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "layer", "energy", "feasible_fraction"))
            for e, k, v, f in self.energy:
                w.writerow((e, k, repr(v), repr(f)))

    def write_timing_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "seconds"))
            for e, t in enumerate(self.epoch_times, start=1):
                w.writerow((e, f"{t:.6f}"))


def _fmt(a):
    return "" if a is None else repr(float(a))


@dataclass
class TrainResult:
    log: MetricsLog
    params: ModelParams
    state: SummaryState
    optimizer: object
    rng: np.random.Generator


def evaluate(g, bundle, params, state, cfg, mutate=False):
    """Fraction of target nodes in ``bundle`` whose argmax prediction is correct.

    Runs the forward pass only.  ``state`` is read, and updated only when
    ``mutate`` is set.
    """
    correct = total = 0
    for s in bundle:
        p = forward_subgraph(params, g.features, s, state, cfg)
        if mutate:
            online_mean_update(state, s, p.trace.Y, cfg.rho)
        y = g.labels[s.global_ids[:s.n_targets]]
        correct += int((p.logits.argmax(axis=1) == y).sum())
        total += s.n_targets
    if total == 0:
        raise GraphError("evaluation bundle has no target nodes")
    return correct / total


def accuracy_from_logits(logits, labels):
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise GraphError("empty split")
    return float((np.asarray(logits).argmax(axis=1) == labels).mean())


def _header(g, cfg, epoch):
    e = cfg.energy
    return {"epoch": epoch, "seed": cfg.seed, "graph_digest": g.digest.hex(),
            "energy": {"lam": e.lam, "gamma": e.gamma, "alpha": e.alpha, "rho": e.rho, "K": e.K,
                       "penalty": e.penalty, "precondition": e.precondition},
            "optimizer": cfg.optimizer, "lr": cfg.lr, "schedule": cfg.schedule, **cfg.header_extra}


def train(g, train_bundle, eval_bundles, cfg, params=None, state=None, progress=None):
    """Run the training loop; returns a :class:`TrainResult`.

    Per subgraph: gather the summary rows, run ``f`` then ``K`` unfolded layers,
    fold the final embeddings into the summary state, then take one optimizer
    step on that subgraph's loss with the summary treated as a constant.
    """
    train_bundle.check_graph(g)
    for b in eval_bundles.values():
        b.check_graph(g)
    ecfg = cfg.energy
    if params is None:
        params = ModelParams.init(g.num_features, cfg.hidden, g.num_classes, cfg.seed, cfg.dropout)
    if state is None:
        state = SummaryState.zeros(g.n, cfg.hidden)
    opt = make_optimizer(cfg.optimizer, cfg.lr, cfg.schedule, cfg.weight_decay)
    drop_rng = stream(cfg.seed, "dropout")
    log = MetricsLog()
    step = 0
    last_ckpt = None

    def run_eval(epoch):
        accs = {}
        for split in ("train", "val", "test"):
            b = eval_bundles.get(split)
            accs[split] = None if b is None else evaluate(g, b, params, state, ecfg, cfg.mutate_eval)
        log.evals.append((epoch, step, accs["train"], accs["val"], accs["test"]))
        return accs

    def checkpoint(epoch):
        save_checkpoint(cfg.checkpoint_path, params, state, _header(g, cfg, epoch), opt, drop_rng)
        return cfg.checkpoint_path

    run_eval(0)
    if cfg.dry_run:
        if cfg.checkpoint_path:
            checkpoint(0)
        return TrainResult(log, params, state, opt, drop_rng)

    arrays = params.arrays()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = stream(cfg.seed, "order", epoch).permutation(len(train_bundle))
        layer_sum = np.zeros(ecfg.K + 1)
        feasible = np.zeros(ecfg.K + 1)
        for idx in order:
            s = train_bundle[int(idx)]
            p = forward_subgraph(params, g.features, s, state, ecfg,
                                 rng=drop_rng if params.dropout > 0 else None,
                                 record_energy=cfg.record_energy)
            online_mean_update(state, s, p.trace.Y, ecfg.rho)
            gb = backward([p], params, g.labels, ecfg)
            step += 1
            if not math.isfinite(gb.loss):
                raise TrainingAborted(f"non-finite loss at epoch {epoch} step {step}; "
                                      f"last good checkpoint: {last_ckpt or 'none'}")
            opt.step(arrays, gb.grads)
            log.steps.append((epoch, step, gb.loss / s.n_targets))
            if cfg.record_energy:
                for k, t in enumerate(p.trace.terms):
                    layer_sum[k] += t["fit"] + t["smooth"] + t["anchor"]
                    feasible[k] += math.isfinite(t["penalty"])
        if cfg.record_energy:
            m = len(train_bundle)
            for k in range(ecfg.K + 1):
                log.energy.append((epoch, k, layer_sum[k] / m, feasible[k] / m))
        log.epoch_times.append(time.perf_counter() - t0)
        accs = run_eval(epoch) if epoch % cfg.eval_every == 0 or epoch == cfg.epochs else None
        if progress is not None:
            losses = [l for e, _, l in log.steps if e == epoch]
            acc = "nan" if not accs or accs["val"] is None else f"{accs['val']:.4f}"
            progress(f"epoch={epoch} step={step} loss={np.mean(losses):.6f} acc_val={acc}")
        if cfg.checkpoint_path and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            last_ckpt = checkpoint(epoch)
    if cfg.checkpoint_path:
        checkpoint(cfg.epochs)
    return TrainResult(log, params, state, opt, drop_rng)


def predict_split(g, bundle, params, state, cfg):
    """Concatenated eval-mode logits and labels over the bundle's targets."""
    logits, labels = [], []
    for s in bundle:
        logits.append(predict(params, g.features, s, state, cfg))
        labels.append(g.labels[s.global_ids[:s.n_targets]])
    return np.vstack(logits), np.concatenate(labels)
