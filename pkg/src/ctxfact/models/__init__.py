from .als import als_train, fit, fit_blocks, posthoc_context_fit
from .factors import (
    FactorModel,
    identity_factor,
    init_model,
    predict_cp,
    predict_pitf,
    predict_ttf,
    score_items,
)
from .io import load_model, model_from_dict, model_to_dict, save_model
from .loss import LossTooLargeError, loss, observed_loss
from .params import VARIANTS, Hyperparams, Kind, RegMode, Solver, Structure, variant
from .updates import (
    EXACT_MAX_K,
    ITEMS,
    USERS,
    UnsupportedStructureError,
    block_reg,
    context_system,
    reg_strength,
    row_problem,
    update_block,
    update_block_cp,
    update_block_pitf,
    update_context_ttf,
    update_users_items_ttf,
)
