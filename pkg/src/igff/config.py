"""Experiment configuration: a YAML key-value tree mapped onto dataclasses.

``parse_config`` validates everything before any compute starts and reports
every violation with its key path, not just the first one.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .analytics import validate_params
from .field import N_EXACT_MAX
from .lattice import ROUNDING
from .rpc import CONSTRUCTIONS, TAILS

KINDS = ("analytics", "simulate", "rpc", "verify")
N_GATES = 13


class ConfigError(ValueError):
    """All violations found in one config, each as (key path, message)."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


@dataclass
class RPCSettings:
    K: int = 512
    trees: int = 200
    pairs_per_tree: int = 100
    tail: str = "dust"
    construction: str = "standard"


@dataclass
class ExperimentConfig:
    kind: str = "analytics"
    sigma: list = field(default_factory=lambda: [1.0])
    lam: list = field(default_factory=lambda: [1.0])
    beta: list = field(default_factory=lambda: [1.0])
    N: list = field(default_factory=lambda: [16])
    rho: float = 0.2
    master_seed: int = 1
    field_samples: int = 100
    replica_counts: list = field(default_factory=lambda: [2])
    gg_window: list = field(default_factory=lambda: [0.1, 0.4])
    rpc: RPCSettings = field(default_factory=RPCSettings)
    gates: list = field(default_factory=list)
    rounding: str = "floor"
    out: str = "results"
    threads: int = 1

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {
            "kind": d["kind"],
            "params": {"sigma": d["sigma"], "lambda": d["lam"]},
            "beta": d["beta"],
            "N": d["N"],
            "rho": d["rho"],
            "master_seed": d["master_seed"],
            "field_samples": d["field_samples"],
            "replica_counts": d["replica_counts"],
            "gg_window": d["gg_window"],
            "rpc": d["rpc"],
            "gates": d["gates"],
            "rounding": d["rounding"],
            "out": d["out"],
            "threads": d["threads"],
        }


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------- validation helpers

def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (isinstance(x, (int, float))) and not isinstance(x, bool)


class _Checker:
    def __init__(self):
        self.problems: list[tuple[str, str]] = []

    def bad(self, path: str, msg: str) -> None:
        self.problems.append((path, msg))

    def num(self, path, x, lo=None, hi=None, lo_open=False):
        if not _is_num(x):
            self.bad(path, f"expected a number, got {type(x).__name__}")
            return None
        x = float(x)
        if lo is not None and (x < lo or (lo_open and x == lo)):
            self.bad(path, f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and x > hi:
            self.bad(path, f"must be <= {hi}")
        return x

    def int_(self, path, x, lo=None, hi=None):
        if not _is_int(x):
            self.bad(path, f"expected an integer, got {type(x).__name__}")
            return None
        if lo is not None and x < lo:
            self.bad(path, f"must be >= {lo}")
        if hi is not None and x > hi:
            self.bad(path, f"must be <= {hi}")
        return x

    def choice(self, path, x, options):
        if not isinstance(x, str):
            self.bad(path, f"expected a string, got {type(x).__name__}")
            return None
        if x not in options:
            self.bad(path, f"must be one of {list(options)}")
        return x

    def seq(self, path, x, item, allow_empty=True):
        if not isinstance(x, list):
            self.bad(path, f"expected a list, got {type(x).__name__}")
            return None
        if not x and not allow_empty:
            self.bad(path, "must not be empty")
        return [item(f"{path}[{i}]", v) for i, v in enumerate(x)]

    def keys(self, path, d, allowed):
        for k in d:
            if k not in allowed:
                self.bad(f"{path}.{k}" if path else str(k), "unknown key")


TOP_KEYS = ("kind", "params", "beta", "N", "rho", "master_seed", "field_samples", "replica_counts", "gg_window",
            "rpc", "gates", "rounding", "out", "threads")
RPC_KEYS = tuple(f.name for f in dataclasses.fields(RPCSettings))


def config_from_dict(raw) -> ExperimentConfig:
    """Validate a parsed key-value tree; raises ConfigError listing every violation."""
    c = _Checker()
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([("", "top level must be a mapping")])
    c.keys("", raw, TOP_KEYS)
    cfg = ExperimentConfig()
    if "kind" in raw:
        cfg.kind = c.choice("kind", raw["kind"], KINDS)
    params = raw.get("params", {})
    if not isinstance(params, dict):
        c.bad("params", "expected a mapping")
        params = {}
    c.keys("params", params, ("sigma", "lambda"))
    pos = lambda p, v: c.num(p, v, 0.0, lo_open=True)
    sig = c.seq("params.sigma", params.get("sigma", cfg.sigma), pos, allow_empty=False)
    lam = c.seq("params.lambda", params.get("lambda", cfg.lam), pos, allow_empty=False)
    if sig is not None and lam is not None and None not in sig and None not in lam:
        for msg in validate_params(sig, lam):
            path = "params.sigma" if "sigma" in msg else "params.lambda"
            c.bad(path, msg)
    cfg.sigma, cfg.lam = sig, lam
    if "beta" in raw:
        cfg.beta = c.seq("beta", raw["beta"], pos)
    if "N" in raw:
        cfg.N = c.seq("N", raw["N"], lambda p, v: c.int_(p, v, 2, N_EXACT_MAX), allow_empty=False)
    if "rho" in raw:
        cfg.rho = c.num("rho", raw["rho"], 0.0, 1.0, lo_open=True)
    if "master_seed" in raw:
        cfg.master_seed = c.int_("master_seed", raw["master_seed"], 0, 2**64 - 1)
    if "field_samples" in raw:
        cfg.field_samples = c.int_("field_samples", raw["field_samples"], 2)
    if "replica_counts" in raw:
        cfg.replica_counts = c.seq("replica_counts", raw["replica_counts"], lambda p, v: c.int_(p, v, 1, 4))
    if "gg_window" in raw:
        w = c.seq("gg_window", raw["gg_window"], lambda p, v: c.num(p, v, 0.0, 1.0))
        if w is not None:
            if len(w) != 2:
                c.bad("gg_window", "expected [alpha, alpha']")
            elif None not in w and not w[0] < w[1]:
                c.bad("gg_window", "need alpha < alpha'")
        cfg.gg_window = w
    rpc = raw.get("rpc", {})
    if not isinstance(rpc, dict):
        c.bad("rpc", "expected a mapping")
        rpc = {}
    c.keys("rpc", rpc, RPC_KEYS)
    rs = RPCSettings()
    if "K" in rpc:
        rs.K = c.int_("rpc.K", rpc["K"], 1)
    if "trees" in rpc:
        rs.trees = c.int_("rpc.trees", rpc["trees"], 2)
    if "pairs_per_tree" in rpc:
        rs.pairs_per_tree = c.int_("rpc.pairs_per_tree", rpc["pairs_per_tree"], 1)
    if "tail" in rpc:
        rs.tail = c.choice("rpc.tail", rpc["tail"], TAILS)
    if "construction" in rpc:
        rs.construction = c.choice("rpc.construction", rpc["construction"], CONSTRUCTIONS)
    cfg.rpc = rs
    if "gates" in raw:
        cfg.gates = c.seq("gates", raw["gates"], lambda p, v: c.int_(p, v, 1, N_GATES))
    if "rounding" in raw:
        cfg.rounding = c.choice("rounding", raw["rounding"], ROUNDING)
    if "out" in raw:
        if not isinstance(raw["out"], str) or not raw["out"]:
            c.bad("out", "expected a non-empty string")
        cfg.out = raw["out"]
    if "threads" in raw:
        cfg.threads = c.int_("threads", raw["threads"], 1)
    if c.problems:
        raise ConfigError(c.problems)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError([("", f"not valid YAML: {e}")]) from None
    return config_from_dict(raw)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
