"""CSV ingestion, preprocessing and synthetic fixtures."""
from __future__ import annotations

import calendar
import csv
import datetime as dt
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .tensor import MISSING, ContextSchema, Feature, InteractionTensor, from_arrays, build_tensor


class DatasetError(ValueError):
    pass


class Record(NamedTuple):
    user: str
    item: str
    context: tuple
    amplitude: float = 1.0
    rating: float | None = None


@dataclass
class DatasetSpec:
    path: str
    user: str = "user"
    item: str = "item"
    contexts: list[str] = field(default_factory=list)
    rating: str | None = None
    date: str | None = None
    date_format: str = "%Y-%m-%d"
    amplitude: str | None = None
    threshold: float | None = None
    min_user_items: int = 3
    min_item_interactions: int = 0
    missing: list[str] = field(default_factory=lambda: [""])
    delimiter: str = ","

    @classmethod
    def from_dict(cls, data: dict) -> DatasetSpec:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise DatasetError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def context_names(self) -> list[str]:
        return list(self.contexts) + (["season", "weekday"] if self.date else [])


def frappe_spec(path) -> DatasetSpec:
    """Column mapping for the tab-separated Frappe app-usage log."""
    return DatasetSpec(
        path=str(path), contexts=["daytime", "weekday", "weather"],
        missing=["", "unknown"], delimiter="\t", min_user_items=3,
    )


SEASONS = {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring", 5: "spring",
           6: "summer", 7: "summer", 8: "summer", 9: "autumn", 10: "autumn", 11: "autumn"}


def date_contexts(date: dt.date | str) -> tuple[str, str]:
    """Meteorological season and ISO weekday name of a calendar date."""
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    return SEASONS[date.month], calendar.day_name[date.weekday()]


def _number(value: str, what: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise DatasetError(f"line {line}: cannot parse {what} {value!r}") from None


def load_interactions_csv(spec: DatasetSpec) -> list[Record]:
    """Read typed records; context cells matching a missing marker become None."""
    missing = set(spec.missing)
    records = []
    with open(spec.path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=spec.delimiter)
        header = reader.fieldnames or []
        required = [spec.user, spec.item, *spec.contexts]
        required += [c for c in (spec.rating, spec.date, spec.amplitude) if c]
        for col in required:
            if col not in header:
                raise DatasetError(f"{spec.path}: missing column {col!r}")
        for row in reader:
            line = reader.line_num
            ctx = [None if row[c] is None or row[c].strip() in missing else row[c].strip()
                   for c in spec.contexts]
            if spec.date:
                try:
                    date = dt.datetime.strptime(row[spec.date].strip(), spec.date_format).date()
                except (ValueError, AttributeError):
                    raise DatasetError(f"line {line}: cannot parse date {row[spec.date]!r}") from None
                ctx.extend(date_contexts(date))
            rating = _number(row[spec.rating], "rating", line) if spec.rating else None
            amp = _number(row[spec.amplitude], "amplitude", line) if spec.amplitude else 1.0
            records.append(Record(row[spec.user], row[spec.item], tuple(ctx), amp, rating))
    return records


def binarize(records: Sequence[Record], threshold: float | None = 3) -> list[Record]:
    """Keep records rated at least ``threshold``; no-op without a threshold."""
    if threshold is None:
        return list(records)
    if any(r.rating is None for r in records):
        raise DatasetError("binarize needs a rating on every record")
    return [r for r in records if r.rating >= threshold]


def filter_core(records: Sequence[Record], min_user_items: int = 3, min_item_inter: int = 0) -> list[Record]:
    """Drop rare items, then users with too few distinct items, until stable."""
    out = list(records)
    while True:
        before = len(out)
        if min_item_inter > 0:
            counts = Counter(r.item for r in out)
            out = [r for r in out if counts[r.item] >= min_item_inter]
        if min_user_items > 0:
            items = {}
            for r in out:
                items.setdefault(r.user, set()).add(r.item)
            out = [r for r in out if len(items[r.user]) >= min_user_items]
        if len(out) == before:
            return out


def encode(records: Sequence[Record], names: Sequence[str]) -> InteractionTensor:
    """Index context labels (sorted per feature) and build the tensor."""
    d = len(names)
    labels = []
    for f in range(d):
        labels.append(tuple(sorted({r.context[f] for r in records if r.context[f] is not None})))
    features = tuple(
        Feature(names[f], max(len(labels[f]), 1), any(r.context[f] is None for r in records))
        for f in range(d)
    )
    schema = ContextSchema(features, tuple(labels))
    index = [{v: j for j, v in enumerate(ls)} for ls in labels]
    rows = [
        (r.user, r.item, tuple(None if v is None else index[f][v] for f, v in enumerate(r.context)), r.amplitude)
        for r in records
    ]
    return build_tensor(rows, schema)


def preprocess(spec: DatasetSpec) -> InteractionTensor:
    records = load_interactions_csv(spec)
    records = binarize(records, spec.threshold)
    records = filter_core(records, spec.min_user_items, spec.min_item_interactions)
    return encode(records, spec.context_names)


def write_canonical(t: InteractionTensor, path) -> Path:
    """Write ``user,item,ctx_<name>...,amplitude`` plus a JSON schema sidecar."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", *(f"ctx_{n}" for n in t.schema.names), "amplitude"])
        for u, i, c, a in zip(t.users, t.items, t.ctx, t.amplitude):
            w.writerow([int(u), int(i), *("" if v == MISSING else int(v) for v in c), repr(float(a))])
    sidecar = schema_path(path)
    sidecar.write_text(json.dumps({
        "schema": t.schema.to_dict(),
        "users": t.m, "items": t.n,
        "user_ids": [str(x) for x in t.user_ids],
        "item_ids": [str(x) for x in t.item_ids],
    }, indent=2))
    return sidecar


def schema_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".schema.json")


def read_canonical(path) -> InteractionTensor:
    path = Path(path)
    meta = json.loads(schema_path(path).read_text())
    schema = ContextSchema.from_dict(meta["schema"])
    users, items, ctx, amp = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["user", "item"] or header[-1] != "amplitude" or len(header) != schema.d + 3:
            raise DatasetError(f"{path}: header does not match the schema sidecar")
        for row in reader:
            users.append(int(row[0]))
            items.append(int(row[1]))
            ctx.append([MISSING if v == "" else int(v) for v in row[2:-1]])
            amp.append(float(row[-1]))
    return InteractionTensor(
        int(meta["users"]), int(meta["items"]), schema, np.array(users, dtype=np.int64),
        np.array(items, dtype=np.int64), np.array(ctx, dtype=np.int64).reshape(len(users), schema.d),
        np.array(amp), tuple(meta.get("user_ids", ())), tuple(meta.get("item_ids", ())),
    )


class Signal(str, Enum):
    NONE = "none"
    CONTEXT_OFFSET = "context_offset"


def synth_fixture(m: int, n: int, schema: ContextSchema, signal: Signal | str = Signal.CONTEXT_OFFSET,
                  seed: int = 0, per_user: int = 20, rank: int = 6, boost: float = 30.0,
                  concentration: float = 1.0, zipf: float = 1.0,
                  missing_rate: float = 0.1) -> InteractionTensor:
    """Planted-genre implicit feedback data.

    Items belong to one of ``rank`` latent genres with Zipf-like popularity
    inside the genre; users mix genres with Dirichlet(``concentration``)
    weights. Context values
    are drawn uniformly. With ``CONTEXT_OFFSET`` every context value
    multiplies the odds of one genre by ``boost``, so context predicts what
    is consumed; with ``NONE`` the context is independent of user and item.
    Features that allow missing values are blanked with ``missing_rate``.
    """
    signal = Signal(signal)
    rng = np.random.default_rng(seed)
    genre = np.arange(n) % rank
    pop = np.empty(n)
    for g in range(rank):
        members = np.flatnonzero(genre == g)
        pop[members] = 1.0 / (1.0 + rng.permutation(len(members))) ** zipf
        pop[members] /= pop[members].sum()
    prefs = rng.dirichlet(np.full(rank, concentration), size=m)
    boosted = [rng.integers(rank, size=f.cardinality) for f in schema.features]
    records = []
    for u in range(m):
        for _ in range(per_user):
            ctx = [int(rng.integers(f.cardinality)) for f in schema.features]
            odds = prefs[u].copy()
            if signal is Signal.CONTEXT_OFFSET:
                for f, v in enumerate(ctx):
                    odds[boosted[f][v]] *= boost
            g = rng.choice(rank, p=odds / odds.sum())
            members = np.flatnonzero(genre == g)
            i = int(rng.choice(members, p=pop[members]))
            shown = tuple(
                None if feat.allows_missing and rng.random() < missing_rate else v
                for feat, v in zip(schema.features, ctx)
            )
            records.append((u, i, [MISSING if v is None else v for v in shown]))
    users, items, ctx = zip(*records)
    # keep the full m x n index space even if some item is never drawn
    return from_arrays(m, n, schema, users, items, np.array(ctx).reshape(len(records), schema.d),
                        np.ones(len(records)))
