import numpy as np
import pytest

from ctxfact.models import FactorModel, Hyperparams, Kind
from ctxfact.tensor import MISSING, ContextSchema, from_arrays


def random_tensor(rng, m, n, cards, density=0.3, missing=0.0):
    schema = ContextSchema.of(*[(f"c{f}", l, missing > 0) for f, l in enumerate(cards)])
    p = max(1, int(density * m * n * int(np.prod(cards or [1]))))
    users = rng.integers(m, size=p)
    items = rng.integers(n, size=p)
    ctx = np.column_stack([rng.integers(l, size=p) for l in cards]) if cards else np.zeros((p, 0), int)
    if missing and cards:
        ctx = np.where(rng.random(ctx.shape) < missing, MISSING, ctx)
    amp = rng.uniform(0.5, 2.0, size=p)
    return from_arrays(m, n, schema, users, items, ctx, amp)


def random_model(rng, kind, t, k, reg_mode="zero", structure="multi"):
    kind = Kind(kind)
    P = rng.normal(scale=0.5, size=(t.m, k))
    Q = rng.normal(scale=0.5, size=(t.n, k))
    if kind is Kind.TTF:
        contexts = [np.eye(k) + rng.normal(scale=0.3, size=(l, k, k)) for l in t.schema.cardinalities]
    elif kind is Kind.PITF:
        contexts = [rng.normal(scale=0.5, size=(l, k)) for l in t.schema.cardinalities]
    else:
        contexts = [1.0 + rng.normal(scale=0.3, size=(l, k)) for l in t.schema.cardinalities]
    return FactorModel(kind, P, Q, contexts, reg_mode, structure, t.schema, None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def hp_small():
    return Hyperparams(k=2, alpha=3.0, lam=0.2, nu=0.5, iterations=3, solver="exact")


# one (criterion, passed, detail) row per acceptance criterion
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
