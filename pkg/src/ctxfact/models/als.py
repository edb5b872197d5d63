from __future__ import annotations

import logging
from typing import Callable, Iterable

from ..tensor import ContextSchema, InteractionTensor
from .factors import FactorModel, init_model
from .loss import LossTooLargeError, loss, observed_loss
from .params import Hyperparams, Kind, Structure
from .updates import (
    ITEMS,
    USERS,
    Block,
    UnsupportedStructureError,
    block_order,
    update_block,
)

log = logging.getLogger(__name__)

Callback = Callable[[int, Block, FactorModel], None]


def _check_structure(kind: Kind, hp: Hyperparams, t: InteractionTensor) -> None:
    if kind in (Kind.PITF, Kind.TTF) and hp.structure is Structure.MULTI and t.d > 1:
        raise UnsupportedStructureError(
            f"{kind.value} is only defined on 3D (stacked) tensors; use structure='stacked'"
        )


def fit_blocks(model: FactorModel, t: InteractionTensor, hp: Hyperparams, sweeps: int,
               blocks: Iterable[Block] | None = None, callback: Callback | None = None) -> FactorModel:
    """Run ``sweeps`` ALS sweeps over ``blocks`` in place and return the model."""
    tt = model.training_tensor(t)
    blocks = list(block_order(model) if blocks is None else blocks)
    for sweep in range(sweeps):
        for block in blocks:
            new = update_block(tt, model, hp, block)
            if block == USERS:
                model.P = new
            elif block == ITEMS:
                model.Q = new
            else:
                model.contexts[block] = new
            if callback is not None:
                callback(sweep, block, model)
        if log.isEnabledFor(logging.DEBUG):
            msg = f"sweep {sweep + 1}/{sweeps}: observed loss {observed_loss(model, tt, hp):.6g}"
            try:
                msg += f", full loss {loss(model, tt, hp):.6g}"
            except LossTooLargeError:
                pass
            log.debug(msg)
    return model


def als_train(t: InteractionTensor, hp: Hyperparams, kind: Kind | str = Kind.CP,
              callback: Callback | None = None, init: FactorModel | None = None) -> FactorModel:
    """Train a factor model with ``hp.iterations`` ALS sweeps.

    Blocks are updated users, items, then each context block. Stacked models
    fold multi-feature tensors into one context dimension internally. Pass
    ``init`` to start from given factors instead of a fresh initialization.
    """
    kind = Kind(kind)
    _check_structure(kind, hp, t)
    schema = ContextSchema() if kind is Kind.WMF else t.schema
    model = init.copy() if init is not None else init_model(kind, t.m, t.n, schema, hp)
    model.hp = hp
    return fit_blocks(model, t, hp, hp.iterations, callback=callback)


def posthoc_context_fit(base: FactorModel, t: InteractionTensor, hp: Hyperparams,
                        kind: Kind | str, callback: Callback | None = None) -> FactorModel:
    """Fit only the context factors on top of frozen user/item factors.

    One sweep, or three for multidimensional CP where contexts interact.
    """
    kind = Kind(kind)
    if base.k != hp.k:
        raise ValueError(f"base model has k={base.k} but hyperparameters ask for k={hp.k}")
    if (base.m, base.n) != (t.m, t.n):
        raise ValueError(f"base model is {base.m}x{base.n}, data is {t.m}x{t.n}")
    _check_structure(kind, hp, t)
    model = init_model(kind, t.m, t.n, t.schema, hp)
    model.P = base.P.copy()
    model.Q = base.Q.copy()
    sweeps = 3 if kind is Kind.CP and len(model.contexts) > 1 else 1
    return fit_blocks(model, t, hp, sweeps, blocks=range(len(model.contexts)), callback=callback)


def fit(t: InteractionTensor, hp: Hyperparams, kind: Kind | str):
    """Train any supported model kind, including the ItemKNN baseline."""
    kind = Kind(kind)
    if kind is Kind.ITEMKNN:
        from ..baselines import itemknn
        return itemknn(t, hp.neighbors)
    return als_train(t, hp, kind)

