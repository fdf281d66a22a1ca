import pytest
from hypothesis import given, settings, strategies as st

from musegnn.config import SCHEMA, ConfigError, energy_config, format_config, parse_config, train_config

MIN = "graph = g.store\nout_dir = run\n"


def test_defaults_mirror_desk_values():
    cfg = parse_config(MIN)
    assert (cfg["lam"], cfg["gamma"], cfg["K"], cfg["rho"], cfg["hidden"], cfg["batch_size"]) == \
        (20.0, 1.0, 8, 0.9, 32, 64)
    assert cfg["alpha"] is None and cfg["fanouts"] == (10, 15) and cfg["workers"] == 1
    e = energy_config(cfg)
    assert e.penalty == "nonneg" and e.alpha is None
    t = train_config(cfg, "ck.bin")
    assert t.epochs == 30 and t.optimizer == "adam" and t.lr == 1e-3 and t.checkpoint_path == "ck.bin"


def test_every_problem_is_enumerated():
    text = "graph = x\nfoo = 1\nlam = -2\nK = many\nbar\nepochs = 3\nepochs = 4\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text, "c.cfg")
    msgs = "\n".join(info.value.problems)
    assert len(info.value.problems) == 6
    for needle in ("unknown key 'foo'", "'lam'", "'K'", "c.cfg:5", "duplicate key 'epochs'", "'out_dir'"):
        assert needle in msgs


def test_comments_and_blank_lines():
    cfg = parse_config("# run\n\n" + MIN + "lam = 5  # smoother\nprecondition = yes\nalpha = 0.01\n")
    assert cfg["lam"] == 5.0 and cfg["precondition"] is True and cfg["alpha"] == 0.01


def test_format_covers_every_key():
    text = format_config(parse_config(MIN))
    assert [l.split(" = ")[0] for l in text.splitlines()] == list(SCHEMA)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0, 1e3, allow_nan=False), gamma=st.floats(0, 10), rho=st.floats(0, 1),
       K=st.integers(0, 32), fan=st.lists(st.integers(1, 50), min_size=1, max_size=4),
       alpha=st.one_of(st.none(), st.floats(1e-6, 1.0)), pre=st.booleans(),
       opt=st.sampled_from(["adam", "sgd"]), bundle=st.one_of(st.none(), st.just("b.bin")))
def test_round_trip(lam, gamma, rho, K, fan, alpha, pre, opt, bundle):
    cfg = parse_config(MIN)
    cfg.update(lam=lam, gamma=gamma, rho=rho, K=K, fanouts=tuple(fan), alpha=alpha, precondition=pre,
               optimizer=opt, val_bundle=bundle)
    assert parse_config(format_config(cfg)) == cfg
