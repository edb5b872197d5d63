"""Leave-one-out evaluation, repeated splits and grid search."""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import wmf_train
from .models import Hyperparams, Kind, fit, posthoc_context_fit
from .tensor import InteractionTensor, SplitPair, loo_split

METRICS = ("HR", "MRR")
DEFAULT_K = (5, 20)

DEFAULT_GRID = {
    "alpha": [1.0, 10.0, 40.0, 100.0],
    "lam": [1e-4, 1e-3, 1e-2, 1e-1, 1.0],
    "nu": [0.0, 0.5, 1.0],
}
TTF_GRID_EXTRA = {"cg_steps": [2, 3]}


def hr_at_k(ranked: Sequence[int], target: int, k: int) -> int:
    return int(target in list(ranked[:k]))


def mrr_at_k(ranked: Sequence[int], target: int, k: int) -> float:
    top = list(ranked[:k])
    return 1.0 / (top.index(target) + 1) if target in top else 0.0


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Items by descending score, ties by ascending index."""
    return np.argsort(-scores, kind="stable")


def target_rank(scores: np.ndarray, target: int) -> float:
    """1-based rank of ``target`` under ``rank_items``; inf if it is masked out."""
    s = scores[target]
    if not np.isfinite(s):
        return np.inf
    return 1 + int(np.sum(scores > s)) + int(np.sum(scores[:target] == s))


@dataclass
class EvalReport:
    """Per-repetition metric values keyed by ``(metric, k)``."""

    values: dict[tuple[str, int], list[float]] = field(default_factory=dict)

    @property
    def repetitions(self) -> int:
        return max((len(v) for v in self.values.values()), default=0)

    def keys(self):
        return sorted(self.values, key=lambda mk: (METRICS.index(mk[0]) if mk[0] in METRICS else 99, mk[1]))

    def mean(self, metric: str, k: int) -> float:
        return float(np.mean(self.values[metric, k]))

    def std(self, metric: str, k: int) -> float:
        v = self.values[metric, k]
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def __getitem__(self, key: str) -> float:
        metric, k = key.split("@")
        return self.mean(metric, int(k))

    @classmethod
    def merge(cls, reports: Sequence[EvalReport]) -> EvalReport:
        out: dict[tuple[str, int], list[float]] = {}
        for r in reports:
            for key, vals in r.values.items():
                out.setdefault(key, []).extend(vals)
        return cls(out)

    def to_tsv(self) -> str:
        lines = ["metric\tk\tmean\tstd"]
        for metric, k in self.keys():
            lines.append(f"{metric}\t{k}\t{self.mean(metric, k):.6f}\t{self.std(metric, k):.6f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "repetitions": self.repetitions,
            "metrics": [
                {"metric": m, "k": k, "mean": self.mean(m, k), "std": self.std(m, k),
                 "values": list(self.values[m, k])}
                for m, k in self.keys()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> EvalReport:
        return cls({(e["metric"], int(e["k"])): list(e["values"]) for e in data["metrics"]})


def evaluate(model, split: SplitPair, k_list: Sequence[int] = DEFAULT_K, retarget: bool = False) -> EvalReport:
    """Rank all items for every held-out (user, item, context) and score the hit.

    Items the user has in the training set are masked unless ``retarget``.
    """
    history = None if retarget else split.train.user_items()
    ranks = []
    for u, i, ctx in split.test:
        exclude = None if retarget else history[u]
        ranks.append(target_rank(model.score_items(u, ctx, exclude), i))
    ranks = np.array(ranks, dtype=np.float64)
    values = {}
    for k in k_list:
        hits = ranks <= k
        values["HR", k] = [float(hits.mean()) if len(ranks) else 0.0]
        values["MRR", k] = [float(np.where(hits, 1.0 / ranks, 0.0).mean()) if len(ranks) else 0.0]
    return EvalReport(values)


def _run(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _repetition(t, hp, kind, seed, k_list, retarget):
    split = loo_split(t, seed)
    model = fit(split.train, hp, kind)
    return evaluate(model, split, k_list, retarget)


def cross_validate(t: InteractionTensor, hp: Hyperparams, kind: Kind | str, repetitions: int = 5,
                   seeds: Sequence[int] | None = None, k_list: Sequence[int] = DEFAULT_K,
                   retarget: bool = False, workers: int = 1) -> EvalReport:
    """Independent leave-one-out repetitions, one per seed."""
    seeds = list(range(repetitions)) if seeds is None else list(seeds)
    jobs = [(t, hp, Kind(kind), s, tuple(k_list), retarget) for s in seeds]
    return EvalReport.merge(_run(_repetition, jobs, workers))


@dataclass
class Grid:
    params: dict[str, list]
    objective: tuple[str, int] = ("MRR", 5)

    def __post_init__(self):
        if not self.params:
            raise ValueError("grid has no hyperparameters")
        for name, values in self.params.items():
            if not values:
                raise ValueError(f"grid list for {name!r} is empty")
        metric, k = self.objective
        if metric not in METRICS:
            raise ValueError(f"unknown objective metric {metric!r}")
        self.objective = (metric, int(k))

    def __len__(self):
        return int(np.prod([len(v) for v in self.params.values()]))

    def points(self, base: Hyperparams) -> list[Hyperparams]:
        names = list(self.params)
        return [base.replace(**dict(zip(names, combo)))
                for combo in itertools.product(*(self.params[n] for n in names))]

    @classmethod
    def default(cls, kind: Kind | str) -> Grid:
        params = dict(DEFAULT_GRID)
        if Kind(kind) is Kind.TTF:
            params.update(TTF_GRID_EXTRA)
        return cls(params)


def _grid_point(split, hp, kind, k_list, retarget):
    return evaluate(fit(split.train, hp, kind), split, k_list, retarget)


def grid_search(t: InteractionTensor, grid: Grid, kind: Kind | str, seed: int = 0,
                base: Hyperparams | None = None, k_list: Sequence[int] = DEFAULT_K,
                retarget: bool = False, workers: int = 1):
    """Exhaustive search on a single leave-one-out split.

    Returns the best hyperparameters and the leaderboard of
    ``(hyperparams, objective, report)`` sorted best first; ties keep grid
    enumeration order.
    """
    base = base or Hyperparams()
    metric, k = grid.objective
    k_list = tuple(sorted(set(k_list) | {k}))
    split = loo_split(t, seed)
    points = grid.points(base)
    reports = _run(_grid_point, [(split, hp, Kind(kind), k_list, retarget) for hp in points], workers)
    board = [(hp, r.mean(metric, k), r) for hp, r in zip(points, reports)]
    board.sort(key=lambda row: -row[1])
    return board[0][0], board


def _posthoc_point(split, base_model, hp, kind, k_list, retarget):
    model = posthoc_context_fit(base_model, split.train, hp, kind)
    return evaluate(model, split, k_list, retarget)


def _posthoc_repetition(t, base_hp, hp, kind, seed, k_list, retarget):
    split = loo_split(t, seed)
    return _posthoc_point(split, wmf_train(split.train, base_hp), hp, kind, k_list, retarget)


def posthoc_cross_validate(t: InteractionTensor, base_hp: Hyperparams, hp: Hyperparams, kind: Kind | str,
                           repetitions: int = 5, seeds: Sequence[int] | None = None,
                           k_list: Sequence[int] = DEFAULT_K, retarget: bool = False,
                           workers: int = 1) -> EvalReport:
    """Like ``cross_validate`` for contexts fit on top of a WMF trained per split with ``base_hp``."""
    seeds = list(range(repetitions)) if seeds is None else list(seeds)
    jobs = [(t, base_hp, hp, Kind(kind), s, tuple(k_list), retarget) for s in seeds]
    return EvalReport.merge(_run(_posthoc_repetition, jobs, workers))


def posthoc_grid_search(t: InteractionTensor, grid: Grid, kind: Kind | str, base_hp: Hyperparams,
                        seed: int = 0, base: Hyperparams | None = None, k_list: Sequence[int] = DEFAULT_K,
                        retarget: bool = False, workers: int = 1):
    """Grid search over the context hyperparameters with one shared WMF base."""
    base = (base or base_hp).replace(k=base_hp.k)
    metric, k = grid.objective
    k_list = tuple(sorted(set(k_list) | {k}))
    split = loo_split(t, seed)
    wmf = wmf_train(split.train, base_hp)
    points = grid.points(base)
    reports = _run(_posthoc_point, [(split, wmf, hp, Kind(kind), k_list, retarget) for hp in points], workers)
    board = [(hp, r.mean(metric, k), r) for hp, r in zip(points, reports)]
    board.sort(key=lambda row: -row[1])
    return board[0][0], board
