from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..tensor import MISSING, ContextSchema, InteractionTensor, stack
from .params import Hyperparams, Kind, RegMode, Structure


def predict_cp(p: np.ndarray, context_factors: Sequence[np.ndarray], q: np.ndarray) -> float:
    v = np.asarray(p, dtype=np.float64) * np.asarray(q, dtype=np.float64)
    for b in context_factors:
        v = v * b
    return float(v.sum())


def predict_pitf(p: np.ndarray, q: np.ndarray, b: np.ndarray) -> float:
    return float(p @ q + p @ b + q @ b)


def predict_ttf(p: np.ndarray, B: np.ndarray, q: np.ndarray) -> float:
    return float(p @ B @ q)


def _as_index(v) -> int:
    return MISSING if v is None else int(v)


@dataclass(eq=False)
class FactorModel:
    """User/item factors plus per-context factors.

    ``contexts`` holds one array per context block: ``(l_c, k)`` row vectors
    for CP and PITF, ``(l, k, k)`` matrices for TTF. Stacked models keep a
    single block covering every feature of ``schema``.
    """

    kind: Kind
    P: np.ndarray
    Q: np.ndarray
    contexts: list[np.ndarray] = field(default_factory=list)
    reg_mode: RegMode = RegMode.ZERO
    structure: Structure = Structure.STACKED
    schema: ContextSchema = field(default_factory=ContextSchema)
    hp: Hyperparams | None = None

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.reg_mode = RegMode(self.reg_mode)
        self.structure = Structure(self.structure)

    @property
    def k(self) -> int:
        return self.P.shape[1]

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def stacked(self) -> bool:
        return self.structure is Structure.STACKED and self.schema.d > 1

    def default_factor(self) -> np.ndarray:
        """Fixed factor for MISSING contexts; also the regularization target."""
        return identity_factor(self.kind, self.reg_mode, self.k)

    def copy(self) -> FactorModel:
        return FactorModel(
            self.kind, self.P.copy(), self.Q.copy(), [b.copy() for b in self.contexts],
            self.reg_mode, self.structure, self.schema, self.hp,
        )

    def training_tensor(self, t: InteractionTensor) -> InteractionTensor:
        """The tensor the factors are fit against (stacked when required)."""
        if self.kind is Kind.WMF or not self.contexts:
            return t.matrix_view() if t.d else t
        if self.stacked:
            return stack(t)
        return t

    def _slice_scores(self, p: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kind is Kind.PITF:
            return self.Q @ (p + b) + p @ b
        if self.kind is Kind.TTF:
            return self.Q @ (b.T @ p)
        return self.Q @ (p * b)

    def score_items(self, u: int, ctx: Sequence = (), exclude=None) -> np.ndarray:
        """Score every item for user ``u`` in context ``ctx``.

        Items in ``exclude`` get ``-inf``.
        """
        p = self.P[u]
        ctx = [_as_index(v) for v in ctx]
        if not self.contexts:
            scores = self.Q @ p
        elif self.stacked or len(self.contexts) == 1:
            block = self.contexts[0]
            offsets = self.schema.offsets if self.schema.d else (0,)
            known = [offsets[f] + v for f, v in enumerate(ctx) if v != MISSING]
            if known:
                scores = np.mean([self._slice_scores(p, block[j]) for j in known], axis=0)
            else:
                scores = self._slice_scores(p, self.default_factor())
        else:
            b = np.ones(self.k)
            for f, v in enumerate(ctx):
                b = b * (self.contexts[f][v] if v != MISSING else self.default_factor())
            scores = self.Q @ (p * b)
        scores = np.array(scores, dtype=np.float64)
        if exclude is not None and len(exclude):
            scores[np.asarray(exclude, dtype=np.int64)] = -np.inf
        return scores


def score_items(model, u: int, ctx: Sequence = (), exclude=None) -> np.ndarray:
    return model.score_items(u, ctx, exclude)


def identity_factor(kind: Kind, reg_mode: RegMode, k: int) -> np.ndarray:
    if kind is Kind.TTF:
        return np.eye(k) if reg_mode is RegMode.ONE else np.zeros((k, k))
    if kind is Kind.PITF:
        return np.zeros(k)
    return np.ones(k) if reg_mode is RegMode.ONE else np.zeros(k)


def context_blocks(kind: Kind, structure: Structure, schema: ContextSchema) -> list[int]:
    """Row counts of the context blocks a model of this shape trains."""
    if kind is Kind.WMF or schema.d == 0:
        return []
    if structure is Structure.STACKED or schema.d == 1:
        return [schema.stacked_size]
    if kind is not Kind.CP:
        raise ValueError(f"{kind.value} supports only stacked (3D) tensors; multidimensional models need CP")
    return list(schema.cardinalities)


def init_model(kind: Kind, m: int, n: int, schema: ContextSchema, hp: Hyperparams) -> FactorModel:
    """Small uniform user/item factors; context factors at the product identity.

    Contexts start at ones (CP), zeros (PITF) or the identity matrix (TTF)
    whatever the regularization mode, so the initial model carries no
    context effect and ZERO-mode CP/TTF do not start at the all-zero fixed
    point of ALS.
    """
    kind = Kind(kind)
    rng = np.random.default_rng(hp.seed)
    k = hp.k
    bound = 0.1 / np.sqrt(k)
    P = rng.uniform(-bound, bound, size=(m, k))
    Q = rng.uniform(-bound, bound, size=(n, k))
    start = identity_factor(kind, RegMode.ONE, k)
    contexts = [np.broadcast_to(start, (rows,) + start.shape).copy()
                for rows in context_blocks(kind, hp.structure, schema)]
    return FactorModel(kind, P, Q, contexts, hp.reg_mode, hp.structure, schema, hp)
