"""Context-unaware reference recommenders: WMF and item-based cosine kNN."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .models import FactorModel, Hyperparams, Kind, als_train
from .tensor import InteractionTensor


def wmf_train(t: InteractionTensor, hp: Hyperparams, callback=None) -> FactorModel:
    """Weighted matrix factorization on the context-collapsed user-item matrix."""
    return als_train(t, hp, Kind.WMF, callback=callback)


def binary_matrix(t: InteractionTensor) -> sp.csr_matrix:
    mv = t.matrix_view()
    X = sp.csr_matrix((np.ones(mv.p), (mv.users, mv.items)), shape=(t.m, t.n))
    X.sum_duplicates()
    return X


def cosine_similarity(X: sp.spmatrix) -> sp.csr_matrix:
    """Item-item cosine of binary columns, diagonal removed."""
    X = sp.csr_matrix(X, dtype=np.float64)
    co = (X.T @ X).tocsr()
    deg = np.asarray(co.diagonal())
    norm = np.sqrt(deg)
    norm[norm == 0] = 1.0
    inv = sp.diags(1.0 / norm)
    S = (inv @ co @ inv).tocsr()
    S.setdiag(0.0)
    S.eliminate_zeros()
    return S


def top_n(S: sp.csr_matrix, N: int) -> sp.csr_matrix:
    """Keep the ``N`` largest entries of every row (ties to the lower index)."""
    S = S.tocsr()
    rows, cols, vals = [], [], []
    for j in range(S.shape[0]):
        lo, hi = S.indptr[j], S.indptr[j + 1]
        idx, val = S.indices[lo:hi], S.data[lo:hi]
        order = np.lexsort((idx, -val))[:N]
        rows.append(np.full(len(order), j))
        cols.append(idx[order])
        vals.append(val[order])
    if not rows:
        return sp.csr_matrix(S.shape)
    out = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=S.shape)
    out.sort_indices()
    return out


@dataclass(eq=False)
class SimilarityModel:
    similarity: sp.csr_matrix
    neighbors: int
    history: list[np.ndarray]

    @property
    def n(self) -> int:
        return self.similarity.shape[0]

    def score_items(self, u: int, ctx: Sequence = (), exclude=None) -> np.ndarray:
        hist = self.history[u]
        if len(hist):
            scores = np.asarray(self.similarity[hist].sum(axis=0)).ravel()
        else:
            scores = np.zeros(self.n)
        if exclude is not None and len(exclude):
            scores[np.asarray(exclude, dtype=np.int64)] = -np.inf
        return scores


def itemknn(t: InteractionTensor, neighbors: int = 200) -> SimilarityModel:
    X = binary_matrix(t)
    S = top_n(cosine_similarity(X), neighbors)
    history = [X.indices[X.indptr[u]:X.indptr[u + 1]].astype(np.int64) for u in range(t.m)]
    return SimilarityModel(S, neighbors, history)
