from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum


class Kind(str, Enum):
    CP = "cp"
    PITF = "pitf"
    TTF = "ttf"
    WMF = "wmf"
    ITEMKNN = "itemknn"


class RegMode(str, Enum):
    ZERO = "zero"
    ONE = "one"


class Structure(str, Enum):
    STACKED = "stacked"
    MULTI = "multi"


class Solver(str, Enum):
    EXACT = "exact"
    CG = "cg"


@dataclass(frozen=True)
class Hyperparams:
    k: int = 80
    alpha: float = 10.0
    lam: float = 0.01
    nu: float = 0.0
    iterations: int = 10
    cg_steps: int = 3
    reg_mode: RegMode = RegMode.ONE
    structure: Structure = Structure.STACKED
    solver: Solver = Solver.CG
    neighbors: int = 200
    seed: int = 0

    def __post_init__(self):
        for name, enum in (("reg_mode", RegMode), ("structure", Structure), ("solver", Solver)):
            object.__setattr__(self, name, enum(getattr(self, name)))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if not 0 <= self.nu <= 1:
            raise ValueError(f"nu must lie in [0, 1], got {self.nu}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.cg_steps < 0:
            raise ValueError(f"cg_steps must be >= 0, got {self.cg_steps}")

    def replace(self, **changes) -> Hyperparams:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, Enum):
                out[key] = value.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> Hyperparams:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**data)


# Named model variants, mapped to (kind, structure, reg_mode).
VARIANTS: dict[str, tuple[Kind, Structure, RegMode]] = {
    "WMF": (Kind.WMF, Structure.STACKED, RegMode.ZERO),
    "ItemKNN": (Kind.ITEMKNN, Structure.STACKED, RegMode.ZERO),
    "iTALSs": (Kind.CP, Structure.STACKED, RegMode.ZERO),
    "iTALSs-one": (Kind.CP, Structure.STACKED, RegMode.ONE),
    "iTALS": (Kind.CP, Structure.MULTI, RegMode.ZERO),
    "iTALS-one": (Kind.CP, Structure.MULTI, RegMode.ONE),
    "iTALSx": (Kind.PITF, Structure.STACKED, RegMode.ZERO),
    "WTF": (Kind.TTF, Structure.STACKED, RegMode.ZERO),
    "WTF-one": (Kind.TTF, Structure.STACKED, RegMode.ONE),
}


def variant(name: str, hp: Hyperparams | None = None) -> tuple[Kind, Hyperparams]:
    """Resolve a named model variant into its kind and adjusted hyperparameters."""
    try:
        kind, structure, reg_mode = VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown model variant {name!r}; choose from {sorted(VARIANTS)}") from None
    hp = hp or Hyperparams()
    return kind, hp.replace(structure=structure, reg_mode=reg_mode)
