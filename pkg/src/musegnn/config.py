"""Flat ``key = value`` run configuration for ``musegnn train``.

Blank lines and ``#`` comments are ignored.  Every problem in a file (unknown
keys, missing required keys, unparseable or out-of-range values) is collected
and reported together in one :class:`ConfigError`.
"""

from .energy import PENALTIES, EnergyConfig
from .trainer import TrainRunConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  {p}" for p in self.problems))


REQUIRED = object()


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("auto", "none") else float(s)


def _opt_str(s):
    return None if s.strip().lower() in ("", "none") else s.strip()


def _fanouts(s):
    out = tuple(int(x) for x in s.replace(" ", "").split(",") if x)
    if not out:
        raise ValueError("need at least one fanout")
    return out


def _choice(*opts):
    def parse(s):
        s = s.strip()
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}, got {s!r}")
        return s
    return parse


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key -> (parser, default, range check, formatter)
SCHEMA = {
    "graph": (str.strip, REQUIRED, None, str),
    "out_dir": (str.strip, REQUIRED, None, str),
    "fanouts": (_fanouts, (10, 15), lambda v: all(f >= 1 for f in v), lambda v: ",".join(map(str, v))),
    "batch_size": (int, 64, _positive, str),
    "workers": (int, 1, _positive, str),
    "seed": (int, 0, _nonneg, str),
    "epochs": (int, 30, _positive, str),
    "lam": (float, 20.0, _nonneg, repr),
    "gamma": (float, 1.0, _nonneg, repr),
    "alpha": (_opt_float, None, lambda v: v is None or v > 0, lambda v: "auto" if v is None else repr(v)),
    "rho": (float, 0.9, lambda v: 0.0 <= v <= 1.0, repr),
    "K": (int, 8, _nonneg, str),
    "penalty": (_choice(*PENALTIES), "nonneg", None, str),
    "precondition": (_bool, False, None, lambda v: str(v).lower()),
    "hidden": (int, 32, _positive, str),
    "dropout": (float, 0.2, lambda v: 0.0 <= v < 1.0, repr),
    "optimizer": (_choice("adam", "sgd"), "adam", None, str),
    "lr": (float, 1e-3, _positive, repr),
    "schedule": (_choice("inv_sqrt", "constant"), "inv_sqrt", None, str),
    "weight_decay": (float, 0.0, _nonneg, repr),
    "eval_every": (int, 1, _positive, str),
    "checkpoint_every": (int, 0, _nonneg, str),
    "mutate_eval": (_bool, False, None, lambda v: str(v).lower()),
    "record_energy": (_bool, True, None, lambda v: str(v).lower()),
    "dry_run": (_bool, False, None, lambda v: str(v).lower()),
    "train_bundle": (_opt_str, None, None, lambda v: "none" if v is None else v),
    "val_bundle": (_opt_str, None, None, lambda v: "none" if v is None else v),
    "test_bundle": (_opt_str, None, None, lambda v: "none" if v is None else v),
}


def parse_config(text, source="<config>"):
    """Parse config text into a dict holding every schema key."""
    problems = []
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
        elif key in raw:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
        else:
            raw[key] = (lineno, value)
    cfg = {}
    for key, (parse, default, ok, _) in SCHEMA.items():
        if key not in raw:
            if default is REQUIRED:
                problems.append(f"{source}: missing required key {key!r}")
            else:
                cfg[key] = default
            continue
        lineno, value = raw[key]
        try:
            v = parse(value)
        except ValueError as exc:
            problems.append(f"{source}:{lineno}: bad value for {key!r}: {exc}")
            continue
        if ok is not None and not ok(v):
            problems.append(f"{source}:{lineno}: value {value!r} out of range for {key!r}")
            continue
        cfg[key] = v
    if problems:
        raise ConfigError(problems)
    return cfg


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=path)


def format_config(cfg):
    """Canonical text form; ``parse_config(format_config(c)) == c``."""
    return "".join(f"{k} = {SCHEMA[k][3](cfg[k])}\n" for k in SCHEMA)


def energy_config(cfg):
    return EnergyConfig(lam=cfg["lam"], gamma=cfg["gamma"], alpha=cfg["alpha"], rho=cfg["rho"],
                        K=cfg["K"], penalty=cfg["penalty"], precondition=cfg["precondition"])


def train_config(cfg, checkpoint_path=None):
    return TrainRunConfig(epochs=cfg["epochs"], energy=energy_config(cfg), hidden=cfg["hidden"],
                          dropout=cfg["dropout"], optimizer=cfg["optimizer"], lr=cfg["lr"],
                          schedule=cfg["schedule"], weight_decay=cfg["weight_decay"],
                          eval_every=cfg["eval_every"], seed=cfg["seed"],
                          checkpoint_path=checkpoint_path, checkpoint_every=cfg["checkpoint_every"],
                          mutate_eval=cfg["mutate_eval"], record_energy=cfg["record_energy"],
                          dry_run=cfg["dry_run"])
