"""Sparse interaction tensors over (user, item, context_1..context_d).

Only the observed (X = 1) coordinates are stored; every other coordinate of
the dense tensor is an implicit zero with weight one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MISSING = -1


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    cardinality: int
    allows_missing: bool = False


@dataclass(frozen=True)
class ContextSchema:
    features: tuple[Feature, ...] = ()
    # original context labels per feature, for reporting only
    labels: tuple[tuple[str, ...], ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate feature names: {names}")
        for f in self.features:
            if f.cardinality < 1:
                raise SchemaError(f"feature {f.name!r} has cardinality {f.cardinality}")

    @classmethod
    def of(cls, *specs: tuple[str, int] | tuple[str, int, bool]) -> ContextSchema:
        return cls(tuple(Feature(*s) for s in specs))

    @property
    def d(self) -> int:
        return len(self.features)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.features)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for f in self.features:
            out.append(acc)
            acc += f.cardinality
        return tuple(out)

    @property
    def stacked_size(self) -> int:
        return sum(self.cardinalities)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def to_dict(self) -> dict:
        out = {
            "features": [
                {"name": f.name, "cardinality": f.cardinality, "allows_missing": f.allows_missing}
                for f in self.features
            ]
        }
        if self.labels is not None:
            out["labels"] = [list(ls) for ls in self.labels]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ContextSchema:
        feats = tuple(
            Feature(f["name"], int(f["cardinality"]), bool(f.get("allows_missing", False)))
            for f in data["features"]
        )
        labels = data.get("labels")
        if labels is not None:
            labels = tuple(tuple(str(x) for x in ls) for ls in labels)
        return cls(feats, labels)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class InteractionTensor:
    """Positive entries of a binary tensor plus per-entry amplitude.

    ``ctx`` holds one column per context feature, ``MISSING`` (-1) where the
    value is unknown. Entries are sorted by (user, item, ctx) and unique.
    """

    m: int
    n: int
    schema: ContextSchema
    users: np.ndarray
    items: np.ndarray
    ctx: np.ndarray
    amplitude: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        ctx = np.asarray(self.ctx, dtype=np.int64).reshape(len(users), self.schema.d)
        amp = np.asarray(self.amplitude, dtype=np.float64)
        if not (len(users) == len(items) == len(amp)):
            raise SchemaError("entry arrays differ in length")
        if len(users) and (users.min() < 0 or users.max() >= self.m):
            raise SchemaError("user index out of range")
        if len(items) and (items.min() < 0 or items.max() >= self.n):
            raise SchemaError("item index out of range")
        if np.any(amp < 0):
            raise SchemaError("negative amplitude")
        _check_ctx(ctx, self.schema)
        object.__setattr__(self, "users", _readonly(users))
        object.__setattr__(self, "items", _readonly(items))
        object.__setattr__(self, "ctx", _readonly(ctx))
        object.__setattr__(self, "amplitude", _readonly(amp))

    @property
    def p(self) -> int:
        return len(self.users)

    @property
    def d(self) -> int:
        return self.schema.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m, self.n) + self.schema.cardinalities

    def records(self) -> list[tuple[int, int, tuple, float]]:
        out = []
        for u, i, c, a in zip(self.users, self.items, self.ctx, self.amplitude):
            out.append((int(u), int(i), tuple(None if v == MISSING else int(v) for v in c), float(a)))
        return out

    def has_missing(self) -> np.ndarray:
        """Boolean mask of entries with at least one MISSING feature."""
        if self.d == 0:
            return np.zeros(self.p, dtype=bool)
        return (self.ctx == MISSING).any(axis=1)

    def matrix_view(self) -> InteractionTensor:
        """Collapse all contexts; duplicate (user, item) pairs sum their amplitude."""
        return from_arrays(
            self.m, self.n, ContextSchema(), self.users, self.items,
            np.zeros((self.p, 0), dtype=np.int64), self.amplitude,
            self.user_ids, self.item_ids,
        )

    def subset(self, mask: np.ndarray) -> InteractionTensor:
        mask = np.asarray(mask)
        return InteractionTensor(
            self.m, self.n, self.schema, self.users[mask], self.items[mask],
            self.ctx[mask], self.amplitude[mask], self.user_ids, self.item_ids,
        )

    def user_items(self) -> list[np.ndarray]:
        """Distinct items per user."""
        order = np.lexsort((self.items, self.users))
        bounds = np.searchsorted(self.users[order], np.arange(self.m + 1))
        its = self.items[order]
        return [np.unique(its[bounds[u]:bounds[u + 1]]) for u in range(self.m)]

    def __eq__(self, other):
        if not isinstance(other, InteractionTensor):
            return NotImplemented
        return (
            self.m == other.m and self.n == other.n and self.schema == other.schema
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.ctx, other.ctx)
            and np.array_equal(self.amplitude, other.amplitude)
        )

    __hash__ = None


def _check_ctx(ctx: np.ndarray, schema: ContextSchema) -> None:
    for f, feat in enumerate(schema.features):
        col = ctx[:, f]
        if np.any((col < MISSING) | (col >= feat.cardinality)):
            bad = col[(col < MISSING) | (col >= feat.cardinality)][0]
            raise SchemaError(f"value {bad} out of range for feature {feat.name!r} (cardinality {feat.cardinality})")
        if not feat.allows_missing and np.any(col == MISSING):
            raise SchemaError(f"feature {feat.name!r} does not allow missing values")


def from_arrays(m, n, schema, users, items, ctx, amp, user_ids=(), item_ids=()) -> InteractionTensor:
    """Sort and aggregate duplicate coordinates."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ctx = np.asarray(ctx, dtype=np.int64).reshape(len(users), schema.d)
    amp = np.asarray(amp, dtype=np.float64)
    _check_ctx(ctx, schema)
    if len(users) == 0:
        return InteractionTensor(m, n, schema, users, items, ctx, amp, tuple(user_ids), tuple(item_ids))
    coords = np.column_stack([users, items, ctx])
    uniq, inv = np.unique(coords, axis=0, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inv.ravel(), amp)
    return InteractionTensor(
        m, n, schema, uniq[:, 0], uniq[:, 1], uniq[:, 2:], summed,
        tuple(user_ids), tuple(item_ids),
    )


def build_tensor(records: Iterable[Sequence], schema: ContextSchema) -> InteractionTensor:
    """Build a tensor from ``(user_id, item_id, context_values[, amplitude])`` records.

    Context values are indices into each feature (``None`` or ``MISSING`` for
    unknown). User and item ids are reindexed densely in sorted order and
    duplicate coordinates are merged by summing their amplitude.
    """
    recs = list(records)
    if not recs:
        return from_arrays(0, 0, schema, [], [], np.zeros((0, schema.d)), [])
    user_ids = sorted({r[0] for r in recs})
    item_ids = sorted({r[1] for r in recs})
    uidx = {u: j for j, u in enumerate(user_ids)}
    iidx = {i: j for j, i in enumerate(item_ids)}
    users = np.empty(len(recs), dtype=np.int64)
    items = np.empty(len(recs), dtype=np.int64)
    ctx = np.empty((len(recs), schema.d), dtype=np.int64)
    amp = np.ones(len(recs))
    for e, r in enumerate(recs):
        users[e] = uidx[r[0]]
        items[e] = iidx[r[1]]
        values = tuple(r[2])
        if len(values) != schema.d:
            raise SchemaError(f"record {e} has {len(values)} context values, schema has {schema.d}")
        ctx[e] = [MISSING if v is None else v for v in values]
        if len(r) > 3:
            amp[e] = r[3]
    return from_arrays(len(user_ids), len(item_ids), schema, users, items, ctx, amp, user_ids, item_ids)


def stack(t: InteractionTensor) -> InteractionTensor:
    """Fold all context features into one dimension of size sum(l_c).

    Each entry yields one stacked entry per known feature; MISSING features
    yield none. Stacked entries that land on the same coordinate are merged.
    """
    if t.d == 0:
        raise SchemaError("cannot stack a tensor without context features")
    offsets = np.array(t.schema.offsets)
    size = t.schema.stacked_size
    known = t.ctx != MISSING
    e, f = np.nonzero(known)
    stacked_ctx = (t.ctx[e, f] + offsets[f])[:, None]
    name = "+".join(t.schema.names)
    schema = ContextSchema((Feature(name, size, False),))
    return from_arrays(
        t.m, t.n, schema, t.users[e], t.items[e], stacked_ctx, t.amplitude[e],
        t.user_ids, t.item_ids,
    )


def weight_of(x, alpha: float, amplitude=1.0):
    """Confidence weight ``1 + alpha * x * amplitude``."""
    return 1.0 + alpha * x * amplitude


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: InteractionTensor
    test_users: np.ndarray
    test_items: np.ndarray
    test_ctx: np.ndarray

    @property
    def test(self) -> list[tuple[int, int, tuple]]:
        return [
            (int(u), int(i), tuple(None if v == MISSING else int(v) for v in c))
            for u, i, c in zip(self.test_users, self.test_items, self.test_ctx)
        ]

    def __len__(self):
        return len(self.test_users)


def loo_split(t: InteractionTensor, seed: int) -> SplitPair:
    """Leave-one-out: hold out one random entry for every user with >= 2 entries."""
    rng = np.random.default_rng(seed)
    order = np.argsort(t.users, kind="stable")
    bounds = np.searchsorted(t.users[order], np.arange(t.m + 1))
    held = []
    for u in range(t.m):
        lo, hi = bounds[u], bounds[u + 1]
        if hi - lo >= 2:
            held.append(order[lo + rng.integers(hi - lo)])
    held = np.array(held, dtype=np.int64)
    mask = np.ones(t.p, dtype=bool)
    mask[held] = False
    return SplitPair(
        train=t.subset(mask),
        test_users=_readonly(t.users[held]),
        test_items=_readonly(t.items[held]),
        test_ctx=_readonly(t.ctx[held].reshape(len(held), t.d)),
    )
