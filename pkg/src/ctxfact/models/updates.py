"""Exact ALS block updates for the CP, PITF and TTF models.

Every row update solves the weighted ridge problem

    min_r  sum_cells w (x - o - z.r)^2 + reg_r |r - target|^2

where ``z`` is the derivative of the prediction with respect to the row and
``o`` the part of the prediction that does not depend on it. The sum over
unobserved cells (x = 0, w = 1) is folded into precomputed Gram-style
"background" terms; observed entries add corrections on top of them.

Entries with a MISSING context value are not cells of the dense tensor.
They are scored with the fixed default factor and enter the loss as extra
cells with their full weight, so they get no background counterpart.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..linalg import LinearOperator, cg_solve, gram, solve_spd
from ..tensor import MISSING, InteractionTensor
from .factors import FactorModel
from .params import Hyperparams, Kind, Solver

Block = Union[str, int]
USERS = "users"
ITEMS = "items"

EXACT_MAX_K = 32


class UnsupportedStructureError(ValueError):
    pass


def reg_strength(lam: float, nu: float, weight_sum):
    """Per-row regularization ``lam * weight_sum ** nu``."""
    return lam * np.power(weight_sum, nu)


def entry_weights(t: InteractionTensor, hp: Hyperparams):
    """Per-entry weight ``w`` and correction coefficient ``c`` over the background.

    ``c = w - 1`` for entries that are real cells and ``c = w`` for entries
    with a MISSING context value.
    """
    w = 1.0 + hp.alpha * t.amplitude
    c = np.where(t.has_missing(), w, w - 1.0)
    return w, c


def block_order(model: FactorModel) -> list[Block]:
    return [USERS, ITEMS] + list(range(len(model.contexts)))


def _training(t: InteractionTensor, model: FactorModel) -> InteractionTensor:
    if t.d == len(model.contexts):
        return t
    tt = model.training_tensor(t)
    if tt.d != len(model.contexts):
        raise ValueError(f"tensor has {t.d} context features, model has {len(model.contexts)} context blocks")
    return tt


def _context_at(model: FactorModel, f: int, col: np.ndarray) -> np.ndarray:
    """Context factor of block ``f`` gathered per entry, default where MISSING."""
    block = model.contexts[f]
    out = block[np.where(col == MISSING, 0, col)]
    missing = col == MISSING
    if missing.any():
        out[missing] = model.default_factor()
    return out


@dataclass
class RowProblem:
    """Normal equations for every row of one block, in factored form."""

    nrows: int
    rows: np.ndarray       # row index per involved entry
    Z: np.ndarray          # (entries, K) design vectors
    coef: np.ndarray       # multiplier of z z^T
    rhs_coef: np.ndarray   # multiplier of z on the right-hand side
    A_bg: np.ndarray
    rhs_bg: np.ndarray
    reg: np.ndarray        # per-row strength
    target: np.ndarray     # (K,) shared target

    def systems(self):
        """Yield ``(row, A, b)`` for every row."""
        order = np.argsort(self.rows, kind="stable")
        bounds = np.searchsorted(self.rows[order], np.arange(self.nrows + 1))
        K = self.A_bg.shape[0]
        diag = np.diag_indices(K)
        for r in range(self.nrows):
            sl = order[bounds[r]:bounds[r + 1]]
            Zr = self.Z[sl]
            A = self.A_bg + (Zr.T * self.coef[sl]) @ Zr
            A[diag] += self.reg[r]
            b = self.rhs_bg + Zr.T @ self.rhs_coef[sl] + self.reg[r] * self.target
            yield r, A, b

    def solve(self) -> np.ndarray:
        out = np.empty((self.nrows, self.A_bg.shape[0]))
        for r, A, b in self.systems():
            out[r] = solve_spd(A, b)
        return out


def _block_rows(t: InteractionTensor, block: Block):
    """Row index per entry and the mask of entries that touch the block."""
    if block == USERS:
        return t.users, np.ones(t.p, dtype=bool)
    if block == ITEMS:
        return t.items, np.ones(t.p, dtype=bool)
    col = t.ctx[:, block]
    return col, col != MISSING


def _sizes(t: InteractionTensor) -> list[int]:
    return [t.m, t.n] + list(t.schema.cardinalities)


def _block_index(block: Block) -> int:
    return {USERS: 0, ITEMS: 1}.get(block, block + 2 if isinstance(block, int) else -1)


def block_reg(t: InteractionTensor, model: FactorModel, hp: Hyperparams, block: Block) -> np.ndarray:
    """Frequency-scaled regularization strength of every row of ``block``.

    The weight sum of a row is the number of dense cells through it (each of
    weight one) plus the extra weight of the observed entries that touch it.
    """
    t = _training(t, model)
    _, c = entry_weights(t, hp)
    rows, mask = _block_rows(t, block)
    sizes = _sizes(t)
    j = _block_index(block)
    bg = float(np.prod([s for g, s in enumerate(sizes) if g != j]))
    sums = bg + np.bincount(rows[mask], weights=c[mask], minlength=sizes[j])
    return reg_strength(hp.lam, hp.nu, sums)


def _target(model: FactorModel, block: Block) -> np.ndarray:
    if block in (USERS, ITEMS):
        return np.zeros(model.k)
    return model.default_factor()


def _cp_problem(t, model, hp, block) -> RowProblem:
    w, c = entry_weights(t, hp)
    rows, mask = _block_rows(t, block)
    factors = [model.P, model.Q] + list(model.contexts)
    gathered = [model.P[t.users], model.Q[t.items]] + [
        _context_at(model, f, t.ctx[:, f]) for f in range(t.d)
    ]
    j = _block_index(block)
    A_bg = np.ones((model.k, model.k))
    Z = np.ones((t.p, model.k))
    for g, (F, G) in enumerate(zip(factors, gathered)):
        if g != j:
            A_bg = A_bg * gram(F)
            Z = Z * G
    return RowProblem(
        nrows=factors[j].shape[0], rows=rows[mask], Z=Z[mask], coef=c[mask],
        rhs_coef=w[mask], A_bg=A_bg, rhs_bg=np.zeros(model.k),
        reg=block_reg(t, model, hp, block), target=_target(model, block),
    )


def _pitf_problem(t, model, hp, block) -> RowProblem:
    w, c = entry_weights(t, hp)
    rows, mask = _block_rows(t, block)
    B = model.contexts[0]
    b_e = _context_at(model, 0, t.ctx[:, 0])
    p_e, q_e = model.P[t.users], model.Q[t.items]
    if block == USERS:
        (Y, y_e), (V, v_e), nrows = (model.Q, q_e), (B, b_e), model.m
    elif block == ITEMS:
        (Y, y_e), (V, v_e), nrows = (model.P, p_e), (B, b_e), model.n
    else:
        (Y, y_e), (V, v_e), nrows = (model.P, p_e), (model.Q, q_e), B.shape[0]
    GY, GV = gram(Y), gram(V)
    sY, sV = Y.sum(axis=0), V.sum(axis=0)
    A_bg = V.shape[0] * GY + Y.shape[0] * GV + np.outer(sY, sV) + np.outer(sV, sY)
    # background cells have x = 0, so their residual target is -o
    rhs_bg = -(GY @ sV + GV @ sY)
    Z = y_e + v_e
    o = np.einsum("ek,ek->e", y_e, v_e)
    rhs_coef = w - c * o
    return RowProblem(
        nrows=nrows, rows=rows[mask], Z=Z[mask], coef=c[mask], rhs_coef=rhs_coef[mask],
        A_bg=A_bg, rhs_bg=rhs_bg, reg=block_reg(t, model, hp, block),
        target=np.zeros(model.k),
    )


def _ttf_problem(t, model, hp, block) -> RowProblem:
    w, c = entry_weights(t, hp)
    B = model.contexts[0]
    col = t.ctx[:, 0]
    if block == USERS:
        other, other_e, rows, nrows = model.Q, t.items, t.users, model.m
        transpose = False
    elif block == ITEMS:
        other, other_e, rows, nrows = model.P, t.users, t.items, model.n
        transpose = True
    else:
        raise ValueError("TTF context matrices are updated with update_context_ttf")
    G = gram(other)
    A_bg = np.zeros((model.k, model.k))
    Z = np.empty((t.p, model.k))
    for v in range(B.shape[0]):
        Bv = B[v].T if transpose else B[v]
        A_bg += Bv @ G @ Bv.T
        sel = col == v
        Z[sel] = other[other_e[sel]] @ Bv.T
    sel = col == MISSING
    if sel.any():
        D = model.default_factor()
        Z[sel] = other[other_e[sel]] @ (D if transpose else D.T)
    return RowProblem(
        nrows=nrows, rows=rows, Z=Z, coef=c, rhs_coef=w, A_bg=A_bg,
        rhs_bg=np.zeros(model.k), reg=block_reg(t, model, hp, block),
        target=np.zeros(model.k),
    )


def row_problem(t: InteractionTensor, model: FactorModel, hp: Hyperparams, block: Block) -> RowProblem:
    t = _training(t, model)
    if model.kind in (Kind.CP, Kind.WMF):
        return _cp_problem(t, model, hp, block)
    if model.kind is Kind.PITF:
        return _pitf_problem(t, model, hp, block)
    if model.kind is Kind.TTF:
        return _ttf_problem(t, model, hp, block)
    raise ValueError(f"no ALS update for {model.kind}")


def update_block_cp(t: InteractionTensor, model: FactorModel, hp: Hyperparams, block: Block) -> np.ndarray:
    """Exact minimizer of every row of ``block`` with the other CP blocks fixed."""
    return _cp_problem(_training(t, model), model, hp, block).solve()


def update_block_pitf(t: InteractionTensor, model: FactorModel, hp: Hyperparams, block: Block) -> np.ndarray:
    return _pitf_problem(_training(t, model), model, hp, block).solve()


def update_users_items_ttf(t: InteractionTensor, model: FactorModel, hp: Hyperparams, block: Block) -> np.ndarray:
    return _ttf_problem(_training(t, model), model, hp, block).solve()


@dataclass
class ContextSystem:
    """The k^2 x k^2 linear system of one TTF context matrix."""

    PtP: np.ndarray
    QtQ: np.ndarray
    p_e: np.ndarray
    q_e: np.ndarray
    coef: np.ndarray
    reg: float
    rhs: np.ndarray  # k x k

    def apply(self, B: np.ndarray) -> np.ndarray:
        s = np.einsum("ek,kl,el->e", self.p_e, B, self.q_e)
        return self.PtP @ B @ self.QtQ + self.p_e.T @ ((self.coef * s)[:, None] * self.q_e) + self.reg * B

    def operator(self) -> LinearOperator:
        k = self.PtP.shape[0]
        return LinearOperator(k * k, lambda x: self.apply(x.reshape(k, k)).ravel())

    def matrix(self, chunk: int = 4096) -> np.ndarray:
        k = self.PtP.shape[0]
        M = np.kron(self.PtP, self.QtQ)
        for s in range(0, len(self.coef), chunk):
            K = (self.p_e[s:s + chunk, :, None] * self.q_e[s:s + chunk, None, :]).reshape(-1, k * k)
            M += (K.T * self.coef[s:s + chunk]) @ K
        M[np.diag_indices(k * k)] += self.reg
        return M


def context_system(t: InteractionTensor, model: FactorModel, hp: Hyperparams, v: int,
                   reg: np.ndarray | None = None) -> ContextSystem:
    t = _training(t, model)
    w, c = entry_weights(t, hp)
    sel = t.ctx[:, 0] == v
    if reg is None:
        reg = block_reg(t, model, hp, 0)
    p_e, q_e = model.P[t.users[sel]], model.Q[t.items[sel]]
    target = model.default_factor()
    rhs = p_e.T @ (w[sel][:, None] * q_e) + reg[v] * target
    return ContextSystem(gram(model.P), gram(model.Q), p_e, q_e, c[sel], float(reg[v]), rhs)


def update_context_ttf(t: InteractionTensor, model: FactorModel, hp: Hyperparams, v: int,
                       solver: Solver | str | None = None, reg: np.ndarray | None = None) -> np.ndarray:
    """New k x k matrix for context value ``v``.

    EXACT solves the vectorized system directly; CG runs ``hp.cg_steps``
    conjugate-gradient iterations warm-started at the current matrix.
    """
    solver = Solver(solver or hp.solver)
    k = model.k
    sys_ = context_system(t, model, hp, v, reg)
    if solver is Solver.EXACT:
        if k > EXACT_MAX_K:
            raise ValueError(f"exact context solve needs a {k * k}x{k * k} system; use the CG solver for k > {EXACT_MAX_K}")
        return solve_spd(sys_.matrix(), sys_.rhs.ravel()).reshape(k, k)
    x = cg_solve(sys_.operator(), sys_.rhs.ravel(), hp.cg_steps, x0=model.contexts[0][v].ravel())
    return x.reshape(k, k)


def update_block(t: InteractionTensor, model: FactorModel, hp: Hyperparams, block: Block) -> np.ndarray:
    """Updated factor array for ``block`` of any model kind."""
    t = _training(t, model)
    if model.kind is Kind.TTF and block not in (USERS, ITEMS):
        reg = block_reg(t, model, hp, block)
        return np.stack([update_context_ttf(t, model, hp, v, reg=reg) for v in range(model.contexts[0].shape[0])])
    return row_problem(t, model, hp, block).solve()
