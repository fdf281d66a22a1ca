"""``musegnn`` command line: ingest, sample, train, eval, verify, trace, gen.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

import argparse
import os
import sys

import numpy as np

from . import formats, synth
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, format_config, read_config, train_config
from .energy import EnergyConfig, write_energy_trace
from .graph import GraphError, build_graph
from .model import forward_subgraph
from .rng import stream
from .sampler import BundleError, iid_node_sample, load_bundle, sample_split, save_bundle
from .trainer import TrainingAborted, evaluate, train
from . import verify as V

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
DATA_ERRORS = (GraphError, BundleError, CheckpointError, ConfigError, TrainingAborted, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*args, **kw)

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def workers(default):
    """Worker count: ``MUSE_WORKERS`` overrides ``default``."""
    env = os.environ.get("MUSE_WORKERS")
    w = default
    if env is not None:
        try:
            w = int(env)
        except ValueError:
            raise UsageError(f"MUSE_WORKERS must be an integer, got {env!r}") from None
    if w < 1:
        raise UsageError("worker count must be >= 1")
    return w


def _fanouts(s):
    try:
        out = [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fanout list {s!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("fanouts must be positive integers")
    return out


def _energy_from_header(h):
    return EnergyConfig(**h["energy"])


def _graph_stats(g):
    return f"n={g.n} edges={g.num_edges} d_in={g.num_features} classes={g.num_classes}"


# -- subcommands ------------------------------------------------------------------

def cmd_ingest(args, out):
    g = formats.load_dataset(args.edges, args.features, args.labels, args.masks)
    formats.save_graph(g, args.out)
    print(f"{_graph_stats(g)} digest={g.digest.hex()}", file=out)
    return EXIT_OK


def cmd_sample(args, out):
    g = formats.load_graph(args.graph)
    w = workers(args.workers)
    if args.sampler == "shadow_khop":
        if args.batch_size < 1:
            raise UsageError("--batch-size must be >= 1")
        if args.split not in ("train", "val", "test"):
            raise UsageError("--split must be train, val or test")
        b = sample_split(g, args.split, args.fanouts, args.batch_size, args.seed, workers=w)
    else:
        if args.p is None or not 0.0 < args.p <= 1.0:
            raise UsageError("--p must lie in (0, 1] for the iid sampler")
        if args.m < 1:
            raise UsageError("--m must be >= 1")
        b = iid_node_sample(g, args.p, args.m, args.seed, workers=w)
    save_bundle(b, args.out)
    ns = np.mean([s.n for s in b])
    es = np.mean([s.num_edges for s in b])
    print(f"m={len(b)} mean_nodes={ns:.2f} mean_edges={es:.2f}", file=out)
    return EXIT_OK


def _bundles(cfg, g, w):
    out = {}
    for split in ("train", "val", "test"):
        path = cfg[f"{split}_bundle"]
        if path is not None:
            out[split] = load_bundle(path, g)
        elif g.split_nodes(split).size:
            out[split] = sample_split(g, split, cfg["fanouts"], cfg["batch_size"], cfg["seed"], workers=w)
    if "train" not in out:
        raise GraphError("graph has no training nodes")
    return out


def cmd_train(args, out):
    cfg = read_config(args.config)
    w = workers(cfg["workers"])
    print("# effective config", file=out)
    print(format_config(cfg), end="", file=out)
    g = formats.load_graph(cfg["graph"])
    bundles = _bundles(cfg, g, w)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    ckpt = os.path.join(cfg["out_dir"], "checkpoint.bin")
    tcfg = train_config(cfg, ckpt)
    tcfg.header_extra = {"graph_path": os.path.abspath(cfg["graph"])}
    train_b = bundles.pop("train")
    eval_b = {"train": train_b, **bundles}
    progress = None if args.quiet else (lambda line: print(line, file=out, flush=True))
    res = train(g, train_b, eval_b, tcfg, progress=progress)
    with open(os.path.join(cfg["out_dir"], "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
    res.log.write_csv(os.path.join(cfg["out_dir"], "metrics.csv"))
    res.log.write_energy_csv(os.path.join(cfg["out_dir"], "energy.csv"))
    res.log.write_timing_csv(os.path.join(cfg["out_dir"], "timing.csv"))
    acc = res.log.last_accuracy("val")
    print(f"final acc_val={'nan' if acc is None else f'{acc:.4f}'} checkpoint={ckpt}", file=out)
    return EXIT_OK


def _load_for_eval(args):
    ck = load_checkpoint(args.checkpoint)
    gpath = args.graph or ck.header.get("graph_path")
    if not gpath:
        raise CheckpointError("checkpoint does not record a graph; pass --graph")
    g = formats.load_graph(gpath)
    if ck.header.get("graph_digest") not in (None, g.digest.hex()):
        raise GraphError(f"{gpath}: graph digest does not match the checkpoint")
    b = load_bundle(args.bundle, g)
    return ck, g, b, _energy_from_header(ck.header)


def cmd_eval(args, out):
    ck, g, b, ecfg = _load_for_eval(args)
    acc = evaluate(g, b, ck.params, ck.state, ecfg)
    print(f"accuracy={acc:.6f} targets={sum(s.n_targets for s in b)}", file=out)
    return EXIT_OK


def cmd_trace(args, out):
    ck, g, b, ecfg = _load_for_eval(args)
    traces = [(i, forward_subgraph(ck.params, g.features, s, ck.state, ecfg, record_energy=True).trace)
              for i, s in enumerate(b)]
    write_energy_trace(args.out, traces)
    print(f"wrote {len(traces) * (ecfg.K + 1)} rows for {len(traces)} subgraphs to {args.out}", file=out)
    return EXIT_OK


def cmd_gen(args, out):
    g = synth.generate(args.kind, n=args.n, blocks=args.blocks, p_in=args.p_in, p_out=args.p_out,
                       degree=args.degree, d_in=args.d_in, separation=args.separation,
                       noise=args.noise, seed=args.seed)
    paths = synth.write_dataset(g, args.out_dir)
    print(f"{_graph_stats(g)} files={','.join(paths[k] for k in ('edges', 'features', 'labels', 'masks'))}",
          file=out)
    return EXIT_OK


def _random_graph(n, edge_p, d, seed):
    rng = stream(seed, "verify", "graph")
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < edge_p
    X = rng.normal(size=(n, d))
    return build_graph(np.stack([iu[0][keep], iu[1][keep]], axis=1), n, X, train_mask=np.ones(n, bool))


def cmd_verify(args, out):
    check = args.check
    if args.n < 1 or args.n > 200:
        raise UsageError("--n must lie in [1, 200]")
    if check == "prop31":
        g = _random_graph(args.n, args.edge_p, args.dim, args.seed)
        M = stream(args.seed, "verify", "M").normal(size=(g.n, args.dim))
        if args.trials < 100:
            raise UsageError("--trials must be >= 100 for prop31")
        r = V.verify_prop31(g, M, args.p, args.m, args.trials, args.seed, lam=args.lam,
                            workers=workers(args.workers))
    elif check == "thm52":
        inst = V.linear_instance(n=min(args.n, 60), lam=args.lam, seed=args.seed)
        r = V.verify_thm52(inst, rng_seed=args.seed, replicates=args.replicates)
    else:
        g = _random_graph(args.n, args.edge_p, args.dim, args.seed)
        b = sample_split(g, "train", [args.fanout], args.batch_size, args.seed)
        fXs = [g.features[s.global_ids] for s in b]
        cfg = EnergyConfig(lam=args.lam, gamma=args.gamma, penalty="none", K=args.K)
        if check == "thm53":
            r = V.verify_thm53(b, fXs, cfg, max_iters=args.max_iters, tol=args.tol, rng_seed=args.seed)
        else:
            r = V.verify_descent(b, fXs, cfg, trials=args.trials, rng_seed=args.seed,
                                 alpha_scale=args.alpha_scale)
    print(r.to_record(), file=out)
    if args.report:
        with open(args.report, "a", encoding="utf-8") as fh:
            fh.write(r.to_record() + "\n")
    print(V.summary_table([r]), file=out)
    if r.status == "inconclusive":
        print("warning: oracle did not converge; result inconclusive", file=sys.stderr)
        return EXIT_OK
    return EXIT_OK if r.passed else EXIT_VERIFY


# -- argument parsing -------------------------------------------------------------

def build_parser():
    p = _Parser(prog="musegnn", description="Offline-sampled unfolded graph networks with summary embeddings.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="validate dataset files into a graph store")
    s.add_argument("--edges", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--masks", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("sample", help="draw a fixed subgraph bundle")
    s.add_argument("--graph", required=True)
    s.add_argument("--sampler", choices=("shadow_khop", "iid"), default="shadow_khop")
    s.add_argument("--fanouts", type=_fanouts, default=[10, 15])
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--split", default="train")
    s.add_argument("--p", type=float)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", help="train from a key = value config file")
    s.add_argument("--config", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "accuracy of a checkpoint on a bundle"),
                              ("trace", cmd_trace, "per-layer energy trace CSV")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--bundle", required=True)
        s.add_argument("--graph", help="graph store (defaults to the path recorded in the checkpoint)")
        if name == "trace":
            s.add_argument("--out", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("verify", help="run a theoretical check against its oracle")
    s.add_argument("--check", choices=("prop31", "thm52", "thm53", "descent"), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--edge-p", type=float, default=0.1)
    s.add_argument("--dim", type=int, default=3)
    s.add_argument("--p", type=float, default=0.3)
    s.add_argument("--m", type=int, default=5)
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--lam", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--K", type=int, default=8)
    s.add_argument("--fanout", type=int, default=3)
    s.add_argument("--batch-size", type=int, default=20)
    s.add_argument("--max-iters", type=int, default=500)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--alpha-scale", type=float, default=1.0)
    s.add_argument("--replicates", type=int, default=20)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--report", help="append the JSON record to this file")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("gen", help="write a synthetic dataset")
    s.add_argument("--kind", choices=("sbm", "regular"), default="sbm")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--blocks", type=int, default=2)
    s.add_argument("--p-in", type=float, default=0.01)
    s.add_argument("--p-out", type=float, default=0.001)
    s.add_argument("--degree", type=int, default=6)
    s.add_argument("--d-in", type=int, default=16)
    s.add_argument("--separation", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_gen)
    return p


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
