"""Run configuration loaded from JSON."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .._validation import ConfigurationError
from ..grid import Grid
from ..potential import PotentialProfile
from ..semigroup import DEFAULT_NODE_CAP
from ..spaces import BallFamily, BanachSurrogate
from ..squarefn import SquareFunctionConfig

REQUIRED_SEEDS = ("probes", "atoms", "envelopes")

DEFAULTS = {
    "grid": {"d": 3, "half_width": 1.5, "points_per_axis": 16},
    "potential": {"kind": "constant", "c": 1.0},
    "square_function": {"q": 2.0, "n_t": 96},
    "surrogates": [{"r": 2.0, "n": 1}],
    "ball_family": {"per_axis": 5, "n_radii": 8},
    "probes": {"count": 32, "kinds": ["gaussian", "indicator", "eigenmix"],
               "atom_count": 32, "atom_kinds": ["atom_small", "atom_big"]},
    "ledger": {"probes": 2, "atoms": 2},
    "resolutions": [],
    "envelopes": {"triples": 10000, "t_range": [0.05, 0.5], "holdout": 0.2, "alpha": 1.0},
    "caps": {"node_cap": DEFAULT_NODE_CAP},
    "outputs": {"dir": "out"},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    """Everything a run needs; seeds are mandatory so runs are reproducible."""

    grid: dict
    potential: dict
    square_function: dict
    surrogates: list
    ball_family: dict
    probes: dict
    seeds: dict
    resolutions: list = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    envelopes: dict = field(default_factory=dict)
    caps: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [k for k in REQUIRED_SEEDS if k not in self.seeds]
        if missing:
            raise ConfigurationError(f"config is missing seeds: {', '.join(missing)}")
        for key, value in self.seeds.items():
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigurationError(f"seed {key!r} must be an integer")
        cap = int(self.caps.get("node_cap", DEFAULT_NODE_CAP))
        for spec in [self.grid] + list(self.resolutions):
            g = Grid.from_dict(_merge(self.grid, spec))
            if g.node_count > cap and not self.build_profile(g).is_separable:
                raise ConfigurationError(f"grid with {g.node_count} nodes exceeds the node cap {cap}")
        for key in ("count", "atom_count"):
            if int(self.probes.get(key, 32)) < 32:
                raise ConfigurationError(f"probe {key} must be at least 32")
        self.square_function_config()

    @classmethod
    def from_dict(cls, spec: dict) -> "RunConfig":
        if "seeds" not in spec:
            raise ConfigurationError("config must define seeds")
        merged = _merge(DEFAULTS, spec)
        return cls(**{k: merged[k] for k in cls.__dataclass_fields__ if k in merged})

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    # builders

    def build_grid(self, override: dict | None = None) -> Grid:
        return Grid.from_dict(_merge(self.grid, override or {}))

    def build_profile(self, grid: Grid | None = None) -> PotentialProfile:
        return PotentialProfile.from_config(grid or self.build_grid(), self.potential)

    def square_function_config(self) -> SquareFunctionConfig:
        return SquareFunctionConfig.from_dict(self.square_function)

    def build_ball_family(self, profile: PotentialProfile) -> BallFamily:
        keys = ("per_axis", "n_radii", "r_min", "r_max", "extent")
        return BallFamily.lattice(profile, **{k: self.ball_family[k] for k in keys if k in self.ball_family})

    def resolution_grids(self) -> list[Grid]:
        """The base grid followed by every configured resolution override."""
        return [self.build_grid()] + [self.build_grid(spec) for spec in self.resolutions]

    def surrogate_list(self) -> list[BanachSurrogate]:
        return [BanachSurrogate(float(s["r"]), int(s["n"])) for s in self.surrogates]

    @property
    def node_cap(self) -> int:
        return int(self.caps.get("node_cap", DEFAULT_NODE_CAP))
