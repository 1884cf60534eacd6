"""Experiment configuration: TOML loading, validation and round-trip emission."""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Sequence, Tuple

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import algebra as alg

log = logging.getLogger(__name__)

SEED_ENV = "TODALAB_SEED"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Parse or validation failure; the message names the line or the field."""


@dataclass
class Insertion:
    z: complex
    alpha: Tuple[Any, Any]


@dataclass
class GridSettings:
    n_base: int = 1500
    refine: int = 9


@dataclass
class MCSettings:
    samples: int = 4000
    workers: int = 1
    block_size: int = 256


@dataclass
class WardSettings:
    z0: List[complex] = field(default_factory=list)
    spin: int = 2
    ns: List[int] = field(default_factory=lambda: [0, 1, 2])
    index: int = 0
    delta_ladder: List[float] = field(default_factory=list)


@dataclass
class FusionSettings:
    pair: Tuple[int, int] = (0, 1)
    distances: List[float] = field(default_factory=lambda: [0.02, 0.04, 0.08, 0.16])


@dataclass
class HypergeomSettings:
    chi: Any = None
    kappa: Any = None
    alpha0: Tuple[Any, Any] | None = None
    alpha_inf: Tuple[Any, Any] | None = None
    z: complex = 0.3 + 0.2j


@dataclass
class ExperimentConfig:
    seed: int
    gamma: Any = Fraction(4, 5)
    mu: Tuple[float, float] = (1.0, 1.0)
    insertions: List[Insertion] = field(default_factory=list)
    grid: GridSettings = field(default_factory=GridSettings)
    mc: MCSettings = field(default_factory=MCSettings)
    checks: List[str] = field(default_factory=list)
    ward: WardSettings = field(default_factory=WardSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    hypergeom: HypergeomSettings = field(default_factory=HypergeomSettings)
    out: str = "reports"

    def couplings(self) -> alg.CouplingParams:
        return alg.CouplingParams(self.gamma, *self.mu)

    def insertion_config(self) -> alg.InsertionConfig:
        if not self.insertions:
            raise ConfigError("insertions: at least one insertion is required")
        return alg.InsertionConfig.build([i.z for i in self.insertions],
                                         [alg.CartanVector(*i.alpha) for i in self.insertions],
                                         self.couplings())

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "couplings": {"gamma": _emit_number(self.gamma), "mu": list(self.mu)},
            "insertions": [{"z": _emit_complex(i.z), "alpha": [_emit_number(a) for a in i.alpha]}
                           for i in self.insertions],
            "grid": asdict(self.grid),
            "mc": asdict(self.mc),
            "checks": list(self.checks),
            "ward": {"z0": [_emit_complex(z) for z in self.ward.z0], "spin": self.ward.spin,
                     "ns": list(self.ward.ns), "index": self.ward.index,
                     "delta_ladder": list(self.ward.delta_ladder)},
            "fusion": {"pair": list(self.fusion.pair), "distances": list(self.fusion.distances)},
            "output": {"dir": self.out},
        }
        h = self.hypergeom
        hd = {"z": _emit_complex(h.z)}
        for name in ("chi", "kappa"):
            if getattr(h, name) is not None:
                hd[name] = _emit_number(getattr(h, name))
        for name in ("alpha0", "alpha_inf"):
            if getattr(h, name) is not None:
                hd[name] = [_emit_number(a) for a in getattr(h, name)]
        d["hypergeom"] = hd
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _emit_number(x):
    if isinstance(x, Fraction):
        return str(x) if x.denominator != 1 else int(x)
    return x


def _emit_complex(z: complex) -> list:
    z = complex(z)
    return [z.real, z.imag]


_SCHEMA = {
    "seed": None,
    "couplings": {"gamma", "mu"},
    "insertions": {"z", "alpha"},
    "grid": {"n_base", "refine"},
    "mc": {"samples", "workers", "block_size"},
    "checks": None,
    "ward": {"z0", "spin", "ns", "index", "delta_ladder"},
    "fusion": {"pair", "distances"},
    "hypergeom": {"chi", "kappa", "alpha0", "alpha_inf", "z"},
    "output": {"dir"},
}


def _warn_unknown(data: dict) -> None:
    for key, value in data.items():
        if key not in _SCHEMA:
            log.warning("unknown configuration key %r ignored", key)
            continue
        allowed = _SCHEMA[key]
        if allowed is None:
            continue
        tables = value if isinstance(value, list) else [value]
        for t in tables:
            if isinstance(t, dict):
                for sub in t:
                    if sub not in allowed:
                        log.warning("unknown configuration key %r ignored", f"{key}.{sub}")


def parse_number(x, name: str):
    """Integers and ``"p/q"`` strings stay exact; floats stay floats."""
    if isinstance(x, bool):
        raise ConfigError(f"{name}: expected a number, got {x!r}")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return x
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except ValueError:
            pass
    raise ConfigError(f"{name}: expected a number or 'p/q' string, got {x!r}")


def _complex(x, name: str) -> complex:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return complex(x)
    if isinstance(x, list) and len(x) == 2 and all(isinstance(v, (int, float)) for v in x):
        return complex(x[0], x[1])
    raise ConfigError(f"{name}: expected a number or a [re, im] pair, got {x!r}")


def _pair(x, name: str) -> tuple:
    if not isinstance(x, list) or len(x) != 2:
        raise ConfigError(f"{name}: expected two coordinates, got {x!r}")
    return tuple(parse_number(v, f"{name}[{j}]") for j, v in enumerate(x))


def _int(x, name: str, minimum: int | None = None) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{name}: expected an integer, got {x!r}")
    if minimum is not None and x < minimum:
        raise ConfigError(f"{name}: must be at least {minimum}, got {x}")
    return x


def _floats(x, name: str) -> List[float]:
    if not isinstance(x, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                          for v in x):
        raise ConfigError(f"{name}: expected a list of numbers, got {x!r}")
    return [float(v) for v in x]


def _table(data: dict, key: str) -> dict:
    t = data.get(key, {})
    if not isinstance(t, dict):
        raise ConfigError(f"{key}: expected a table")
    return t


def from_dict(data: dict, env: Dict[str, str] | None = None) -> ExperimentConfig:
    """Validate a parsed document; the seed may come from the environment."""
    env = os.environ if env is None else env
    _warn_unknown(data)
    seed = data.get("seed")
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: expected an integer, got {env[SEED_ENV]!r}") from None
    if seed is None:
        raise ConfigError(f"seed: missing (set it in the file or through {SEED_ENV})")
    seed = _int(seed, "seed", 0)

    cp = _table(data, "couplings")
    gamma = parse_number(cp.get("gamma", "4/5"), "couplings.gamma")
    if not 0 < float(gamma) < 2 ** 0.5:
        raise ConfigError(f"couplings.gamma: must lie in (0, sqrt 2), got {gamma}")
    mu = cp.get("mu", [1.0, 1.0])
    mu = tuple(_floats(mu, "couplings.mu"))
    if len(mu) != 2 or min(mu) <= 0:
        raise ConfigError(f"couplings.mu: expected two positive numbers, got {list(mu)}")

    ins = data.get("insertions", [])
    if not isinstance(ins, list):
        raise ConfigError("insertions: expected an array of tables")
    insertions = []
    for k, t in enumerate(ins):
        if not isinstance(t, dict) or "z" not in t or "alpha" not in t:
            raise ConfigError(f"insertions[{k}]: needs both 'z' and 'alpha'")
        insertions.append(Insertion(_complex(t["z"], f"insertions[{k}].z"),
                                    _pair(t["alpha"], f"insertions[{k}].alpha")))
    zs = [i.z for i in insertions]
    if len(set(zs)) != len(zs):
        raise ConfigError("insertions: positions must be pairwise distinct")

    g = _table(data, "grid")
    grid = GridSettings(_int(g.get("n_base", 1500), "grid.n_base", 2),
                        _int(g.get("refine", 9), "grid.refine", 0))
    m = _table(data, "mc")
    mc = MCSettings(_int(m.get("samples", 4000), "mc.samples", 2),
                    _int(m.get("workers", 1), "mc.workers", 1),
                    _int(m.get("block_size", 256), "mc.block_size", 1))
    checks = data.get("checks", [])
    if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
        raise ConfigError("checks: expected a list of strings")

    w = _table(data, "ward")
    ward = WardSettings(
        [_complex(z, f"ward.z0[{j}]") for j, z in enumerate(w.get("z0", []))],
        _int(w.get("spin", 2), "ward.spin"),
        [_int(n, "ward.ns") for n in w.get("ns", [0, 1, 2])],
        _int(w.get("index", 0), "ward.index", 0),
        _floats(w.get("delta_ladder", []), "ward.delta_ladder"))
    if ward.spin not in (2, 3):
        raise ConfigError(f"ward.spin: must be 2 or 3, got {ward.spin}")
    if insertions and ward.index >= len(insertions):
        raise ConfigError(f"ward.index: {ward.index} out of range")

    f = _table(data, "fusion")
    pair = f.get("pair", [0, 1])
    if (not isinstance(pair, list) or len(pair) != 2
            or not all(isinstance(p, int) and not isinstance(p, bool) for p in pair)
            or pair[0] == pair[1]):
        raise ConfigError(f"fusion.pair: expected two distinct indices, got {pair!r}")
    fusion = FusionSettings(tuple(pair), _floats(f.get("distances", [0.02, 0.04, 0.08, 0.16]),
                                                 "fusion.distances"))

    h = _table(data, "hypergeom")
    hyper = HypergeomSettings(
        parse_number(h["chi"], "hypergeom.chi") if "chi" in h else None,
        parse_number(h["kappa"], "hypergeom.kappa") if "kappa" in h else None,
        _pair(h["alpha0"], "hypergeom.alpha0") if "alpha0" in h else None,
        _pair(h["alpha_inf"], "hypergeom.alpha_inf") if "alpha_inf" in h else None,
        _complex(h.get("z", [0.3, 0.2]), "hypergeom.z"))

    o = _table(data, "output")
    out = o.get("dir", "reports")
    if not isinstance(out, str):
        raise ConfigError("output.dir: expected a string")
    return ExperimentConfig(seed, gamma, mu, insertions, grid, mc, list(checks), ward, fusion,
                            hyper, out)


def loads(text: str, env: Dict[str, str] | None = None, source: str = "<string>") -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries "(at line L, column C)"
        raise ConfigError(f"{source}: {exc}") from None
    return from_dict(data, env)


def load_config(path, env: Dict[str, str] | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return loads(text, env, str(path))


DEMO_CONFIG = """\
# Three insertions of weight 5/2 rho at gamma = 4/5
seed = 20240611
checks = ["kpz", "ward"]

[couplings]
gamma = "4/5"
mu = [1.0, 1.0]

[[insertions]]
z = [-0.6, 0.0]
alpha = ["5/2", "5/2"]

[[insertions]]
z = [0.6, 0.0]
alpha = ["5/2", "5/2"]

[[insertions]]
z = [0.1, 0.4]
alpha = ["5/2", "5/2"]

[grid]
n_base = 1500
refine = 9

[mc]
samples = 4000
workers = 1

[ward]
z0 = [[0.7, 0.9]]
spin = 2
ns = [0, 1, 2]

[fusion]
pair = [0, 1]
distances = [0.02, 0.04, 0.08, 0.16]

[hypergeom]
chi = "4/5"
kappa = 3
alpha0 = ["16/5", "16/5"]
alpha_inf = ["16/5", "16/5"]
z = [0.3, 0.2]
"""


def demo_config() -> ExperimentConfig:
    return loads(DEMO_CONFIG, env={}, source="<demo>")
