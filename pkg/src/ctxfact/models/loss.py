from __future__ import annotations

import numpy as np

from ..tensor import InteractionTensor
from .factors import FactorModel
from .params import Hyperparams, Kind
from .updates import ITEMS, USERS, _context_at, _training, block_reg, entry_weights

MAX_CELLS = 10**7


class LossTooLargeError(ValueError):
    pass


def dense_predictions(model: FactorModel, t: InteractionTensor) -> np.ndarray:
    """Predictions over every cell of the (training) tensor."""
    if model.kind is Kind.PITF:
        B = model.contexts[0]
        P, Q = model.P, model.Q
        return (P @ Q.T)[:, :, None] + (P @ B.T)[:, None, :] + (Q @ B.T)[None, :, :]
    if model.kind is Kind.TTF:
        return np.einsum("uk,ckl,il->uic", model.P, model.contexts[0], model.Q)
    letters = "abcdefghijklmnopqrstuvwxy"[: len(model.contexts)]
    spec = ",".join(["uz", "iz"] + [f"{x}z" for x in letters]) + "->ui" + letters
    return np.einsum(spec, model.P, model.Q, *model.contexts)


def entry_predictions(model: FactorModel, t: InteractionTensor) -> np.ndarray:
    """Predictions at the observed entries, defaults substituted for MISSING."""
    p, q = model.P[t.users], model.Q[t.items]
    if model.kind is Kind.PITF:
        b = _context_at(model, 0, t.ctx[:, 0])
        return np.einsum("ek,ek->e", p, q) + np.einsum("ek,ek->e", p, b) + np.einsum("ek,ek->e", q, b)
    if model.kind is Kind.TTF:
        B = _context_at(model, 0, t.ctx[:, 0])
        return np.einsum("ek,ekl,el->e", p, B, q)
    z = p * q
    for f in range(t.d):
        z = z * _context_at(model, f, t.ctx[:, f])
    return z.sum(axis=1)


def observed_loss(model: FactorModel, t: InteractionTensor, hp: Hyperparams | None = None) -> float:
    """Weighted squared error on observed entries only (cheap diagnostic)."""
    hp = hp or model.hp
    t = _training(t, model)
    w, _ = entry_weights(t, hp)
    return float(np.sum(w * (1.0 - entry_predictions(model, t)) ** 2))


def loss(model: FactorModel, t: InteractionTensor, hp: Hyperparams | None = None,
         max_cells: int = MAX_CELLS) -> float:
    """Full weighted loss plus regularization, by enumerating every cell.

    Meant for testing on small instances; refuses tensors above ``max_cells``.
    """
    hp = hp or model.hp
    t = _training(t, model)
    cells = int(np.prod(t.shape, dtype=np.float64))
    if cells > max_cells:
        raise LossTooLargeError(f"tensor has {cells} cells, exact loss limited to {max_cells}")
    w, _ = entry_weights(t, hp)
    pseudo = t.has_missing()
    Xhat = dense_predictions(model, t)
    W = np.ones(t.shape)
    X = np.zeros(t.shape)
    real = ~pseudo
    coords = (t.users[real], t.items[real]) + tuple(t.ctx[real, f] for f in range(t.d))
    W[coords] = w[real]
    X[coords] = 1.0
    total = float(np.sum(W * (X - Xhat) ** 2))
    if pseudo.any():
        total += float(np.sum(w[pseudo] * (1.0 - entry_predictions(model, t)[pseudo]) ** 2))
    blocks = [(USERS, model.P), (ITEMS, model.Q)] + list(enumerate(model.contexts))
    for block, F in blocks:
        reg = block_reg(t, model, hp, block)
        target = model.default_factor() if block not in (USERS, ITEMS) else 0.0
        dev = (F - target).reshape(F.shape[0], -1)
        total += float(np.sum(reg * np.sum(dev**2, axis=1)))
    return total
