"""JSON model container.

Factor arrays are stored flat in row-major order with an explicit shape.
Python's float repr is the shortest string that round-trips, so save/load
is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..tensor import ContextSchema
from .factors import FactorModel
from .params import Hyperparams, Kind

FORMAT = "ctxfact.model"
VERSION = 1


def _pack(name: str, a: np.ndarray) -> dict:
    a = np.asarray(a)
    return {"name": name, "dtype": a.dtype.kind, "shape": list(a.shape), "values": a.ravel().tolist()}


def _unpack(entry: dict) -> np.ndarray:
    dtype = np.int64 if entry.get("dtype") == "i" else np.float64
    values = np.array(entry["values"], dtype=dtype)
    return values.reshape(entry["shape"])


def model_to_dict(model) -> dict:
    from ..baselines import SimilarityModel

    if isinstance(model, SimilarityModel):
        S = model.similarity.tocsr()
        return {
            "format": FORMAT, "version": VERSION, "kind": Kind.ITEMKNN.value,
            "neighbors": model.neighbors,
            "arrays": [_pack("shape", np.array(S.shape)), _pack("indptr", S.indptr.astype(np.int64)),
                       _pack("indices", S.indices.astype(np.int64)), _pack("data", S.data)],
            "history": [_pack(f"user{u}", h.astype(np.int64)) for u, h in enumerate(model.history)],
        }
    return {
        "format": FORMAT, "version": VERSION, "kind": model.kind.value,
        "reg_mode": model.reg_mode.value, "structure": model.structure.value,
        "hyperparams": model.hp.to_dict() if model.hp else None,
        "schema": model.schema.to_dict(),
        "arrays": [_pack("P", model.P), _pack("Q", model.Q)]
        + [_pack(f"context{j}", b) for j, b in enumerate(model.contexts)],
    }


def model_from_dict(data: dict):
    if data.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} document")
    if data.get("version") != VERSION:
        raise ValueError(f"unsupported container version {data.get('version')}")
    arrays = {e["name"]: _unpack(e) for e in data["arrays"]}
    kind = Kind(data["kind"])
    if kind is Kind.ITEMKNN:
        import scipy.sparse as sp

        from ..baselines import SimilarityModel

        S = sp.csr_matrix((arrays["data"], arrays["indices"], arrays["indptr"]), shape=tuple(arrays["shape"]))
        history = [_unpack(e) for e in data["history"]]
        return SimilarityModel(S, int(data["neighbors"]), history)
    contexts = [arrays[f"context{j}"] for j in range(len(arrays) - 2)]
    hp = Hyperparams.from_dict(data["hyperparams"]) if data.get("hyperparams") else None
    return FactorModel(
        kind, arrays["P"], arrays["Q"], contexts, data["reg_mode"], data["structure"],
        ContextSchema.from_dict(data["schema"]), hp,
    )


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
