import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tensor
from ctxfact.datasets import synth_fixture
from ctxfact.evaluation import (
    EvalReport,
    Grid,
    cross_validate,
    evaluate,
    grid_search,
    hr_at_k,
    mrr_at_k,
    posthoc_cross_validate,
    posthoc_grid_search,
    rank_items,
    target_rank,
)
from ctxfact.models import Hyperparams
from ctxfact.tensor import ContextSchema, SplitPair, build_tensor, loo_split


def ranked_with(target, rank, n=30):
    others = [i for i in range(n) if i != target]
    return others[: rank - 1] + [target] + others[rank - 1:]


@pytest.mark.parametrize(("rank", "k", "hit"), [(1, 5, 1), (6, 5, 0), (5, 5, 1)])
def test_hr_at_k(rank, k, hit):
    assert hr_at_k(ranked_with(7, rank), 7, k) == hit


@pytest.mark.parametrize(("rank", "k", "rr"), [(1, 5, 1.0), (4, 5, 0.25), (21, 20, 0.0)])
def test_mrr_at_k(rank, k, rr):
    assert mrr_at_k(ranked_with(7, rank), 7, k) == rr


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=2, max_size=25), st.data())
def test_target_rank_agrees_with_sort(raw, data):
    scores = np.array(raw, dtype=float)
    target = data.draw(st.integers(0, len(raw) - 1))
    ranked = rank_items(scores)
    assert target_rank(scores, target) == list(ranked).index(target) + 1


class FixedScores:
    def __init__(self, table):
        self.table = table

    def score_items(self, u, ctx=(), exclude=None):
        s = np.array(self.table[u], dtype=float)
        if exclude is not None and len(exclude):
            s[np.asarray(exclude)] = -np.inf
        return s


def _split(n_items=100):
    train = build_tensor([(u, i, ()) for u in range(3) for i in (0, n_items - 1)], ContextSchema())
    train = train.__class__(3, n_items, train.schema, train.users, train.items, train.ctx, train.amplitude)
    return SplitPair(train, np.array([0, 1, 2]), np.array([5, 50, 98]), np.zeros((3, 0), dtype=np.int64))


def test_perfect_model_hits_everything():
    split = _split()
    table = np.zeros((3, 100))
    table[[0, 1, 2], [5, 50, 98]] = 1.0
    report = evaluate(FixedScores(table), split)
    assert report["HR@5"] == 1.0 and report["MRR@5"] == 1.0


def test_constant_scores_hit_rate_follows_index_tiebreak():
    # ties break toward low indices; items 0 and 99 are masked as history
    split = _split()
    report = evaluate(FixedScores(np.zeros((3, 100))), split, k_list=(20,))
    ranks = [5, 50, 97]
    assert report["HR@20"] == pytest.approx(np.mean([r <= 20 for r in ranks]))
    # without masking the same toy has every target one place lower
    retargeted = evaluate(FixedScores(np.zeros((3, 100))), split, k_list=(20,), retarget=True)
    assert retargeted["MRR@20"] == pytest.approx(1 / 6 / 3)


def test_retarget_controls_history_masking():
    split = _split()
    table = np.zeros((3, 100))
    table[:, 0] = 10.0
    table[[0, 1, 2], [5, 50, 98]] = 1.0
    assert evaluate(FixedScores(table), split)["MRR@5"] == 1.0
    assert evaluate(FixedScores(table), split, retarget=True)["MRR@5"] == 0.5


def test_report_statistics():
    r = EvalReport.merge([EvalReport({("HR", 5): [0.2]}), EvalReport({("HR", 5): [0.4]})])
    assert r.repetitions == 2
    assert r.mean("HR", 5) == pytest.approx(0.3)
    assert r.std("HR", 5) == pytest.approx(0.141421356, abs=1e-6)
    assert EvalReport.from_dict(r.to_dict()).values == r.values


def test_report_tsv_shape():
    r = EvalReport({("MRR", 20): [0.1], ("HR", 5): [0.3], ("HR", 20): [0.5], ("MRR", 5): [0.2]})
    lines = r.to_tsv().splitlines()
    assert lines[0] == "metric\tk\tmean\tstd"
    assert [tuple(l.split("\t")[:2]) for l in lines[1:]] == [("HR", "5"), ("HR", "20"), ("MRR", "5"), ("MRR", "20")]


@pytest.fixture(scope="module")
def small():
    return random_tensor(np.random.default_rng(5), 25, 15, [3], density=0.05)


def test_cross_validate_identical_seeds_zero_std(small):
    hp = Hyperparams(k=2, iterations=2)
    r = cross_validate(small, hp, "cp", seeds=[3, 3])
    for m, k in r.keys():
        assert r.std(m, k) == 0.0


@pytest.mark.parametrize("kind", ["wmf", "cp", "pitf", "ttf", "itemknn"])
def test_metric_invariants_on_every_run(small, kind):
    r = cross_validate(small, Hyperparams(k=2, iterations=2), kind, repetitions=2)
    assert r.repetitions == 2 and len(r.keys()) == 4
    for k in (5, 20):
        for hr, mrr in zip(r.values["HR", k], r.values["MRR", k]):
            assert 0 <= mrr <= hr <= 1
        assert min(r.values["HR", k]) <= r.mean("HR", k) <= max(r.values["HR", k])
    for a, b in zip(r.values["MRR", 5], r.values["MRR", 20]):
        assert a <= b


def test_evaluate_is_deterministic(small):
    from ctxfact.models import als_train

    split = loo_split(small, 1)
    model = als_train(split.train, Hyperparams(k=2, iterations=2), "ttf")
    assert evaluate(model, split).values == evaluate(model, split).values


def test_parallel_matches_serial(small):
    hp = Hyperparams(k=2, iterations=1)
    assert cross_validate(small, hp, "cp", repetitions=2, workers=2).values == \
        cross_validate(small, hp, "cp", repetitions=2).values


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid({})
    with pytest.raises(ValueError):
        Grid({"alpha": []})
    with pytest.raises(ValueError):
        Grid({"alpha": [1.0]}, ("AUC", 5))
    assert len(Grid.default("ttf")) == 4 * 5 * 3 * 2
    assert len(Grid.default("cp")) == 4 * 5 * 3


def test_single_point_grid(small):
    best, board = grid_search(small, Grid({"alpha": [3.0]}), "cp", base=Hyperparams(k=2, iterations=1))
    assert best.alpha == 3.0 and len(board) == 1


def test_leaderboard_size_and_order(small):
    grid = Grid({"alpha": [1.0, 20.0], "lam": [0.01, 1.0], "nu": [0.0]})
    best, board = grid_search(small, grid, "cp", base=Hyperparams(k=2, iterations=2))
    assert len(board) == len(grid) == 4
    scores = [s for _, s, _ in board]
    assert scores == sorted(scores, reverse=True)
    assert best == board[0][0]


def test_dominant_point_wins():
    # iterations=0 keeps the random initialization
    t = synth_fixture(80, 30, ContextSchema.of(("c", 2)), seed=0)
    grid = Grid({"iterations": [0, 5]}, ("MRR", 5))
    best, board = grid_search(t, grid, "wmf", base=Hyperparams(k=3, alpha=10.0, lam=0.1))
    assert board[0][1] > board[1][1]
    assert best.iterations == 5


def test_tied_grid_points_keep_enumeration_order(small):
    grid = Grid({"seed": [0, 0, 0]})
    _, board = grid_search(small, grid, "itemknn", base=Hyperparams(neighbors=5))
    assert [hp.seed for hp, _, _ in board] == [0, 0, 0]
    grid = Grid({"neighbors": [3000, 2000]})
    best, _ = grid_search(small, grid, "itemknn")
    assert best.neighbors == 3000


def test_posthoc_helpers(small):
    base = Hyperparams(k=2, iterations=2)
    r = posthoc_cross_validate(small, base, base.replace(solver="exact"), "ttf", repetitions=2)
    assert r.repetitions == 2
    best, board = posthoc_grid_search(small, Grid({"lam": [0.1, 1.0]}), "cp", base)
    assert len(board) == 2 and best.k == 2


def test_constant_scores_hit_rate_is_k_over_n():
    # one test user per item: exactly the 20 lowest indices are hits
    n = 100
    train = build_tensor([], ContextSchema())
    train = train.__class__(n, n, train.schema, train.users, train.items, train.ctx, train.amplitude)
    split = SplitPair(train, np.arange(n), np.arange(n), np.zeros((n, 0), dtype=np.int64))
    report = evaluate(FixedScores(np.zeros((n, n))), split, k_list=(20,), retarget=True)
    assert report["HR@20"] == 20 / n
