"""Command-line driver: preprocess, train, evaluate, grid search, post-hoc fits and reports.

Every subcommand reads a JSON run config; flags override config keys.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .datasets import (
    DatasetError,
    DatasetSpec,
    Signal,
    frappe_spec,
    preprocess,
    read_canonical,
    synth_fixture,
    write_canonical,
)
from .evaluation import (
    DEFAULT_K,
    EvalReport,
    Grid,
    cross_validate,
    evaluate,
    grid_search,
    posthoc_cross_validate,
)
from .models import (
    VARIANTS,
    FactorModel,
    Hyperparams,
    Kind,
    Structure,
    fit,
    load_model,
    posthoc_context_fit,
    save_model,
)
from .tensor import ContextSchema, InteractionTensor, loo_split

log = logging.getLogger("ctxfact")

OUTPUT_ENV = "CTXFACT_OUTPUT_DIR"
DEFAULT_OUTPUT = "ctxfact-out"
CG_KEYS = ("cg_steps", "solver")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything one run needs; see the README for the key reference."""

    dataset: dict
    model: str = "WMF"
    hyperparams: dict = field(default_factory=dict)
    grid: dict | str | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    grid_seed: int = 0
    k_list: list[int] = field(default_factory=lambda: list(DEFAULT_K))
    retarget: bool = False
    output_dir: str | None = None
    workers: int | None = None
    split_seed: int | None = None
    base_model: str | None = None
    base_hyperparams: dict | None = None
    posthoc_models: list[str] = field(default_factory=list)
    reference_report: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "dataset" not in data:
            raise ConfigError("config needs a 'dataset' entry")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        model_kind(self.model)
        for name in self.posthoc_models:
            model_kind(name, key="posthoc_models")
        hp = self.hyperparameters()
        kind = model_kind(self.model)
        if kind is Kind.PITF and hp.structure is Structure.MULTI:
            raise ConfigError("model: iTALSx (pitf) needs structure 'stacked'")
        if kind is not Kind.TTF:
            grid_keys = set(self.grid["params"]) if isinstance(self.grid, dict) else set()
            bad = sorted((set(self.hyperparams) | grid_keys) & set(CG_KEYS))
            if bad:
                raise ConfigError(f"hyperparams: {bad} only apply to TTF models (model is {self.model!r})")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        if not self.k_list or any(int(k) < 1 for k in self.k_list):
            raise ConfigError("k_list: need positive cutoffs")
        self.make_grid()

    def hyperparameters(self) -> Hyperparams:
        return _hyperparams(self.model, self.hyperparams, "hyperparams")

    def make_grid(self) -> Grid | None:
        if self.grid is None:
            return None
        if self.grid == "default":
            return Grid.default(model_kind(self.model))
        if not isinstance(self.grid, dict) or "params" not in self.grid:
            raise ConfigError("grid: expected 'default' or {'params': {...}, 'objective': [metric, k]}")
        try:
            grid = Grid(dict(self.grid["params"]), tuple(self.grid.get("objective", ("MRR", 5))))
            grid.points(self.hyperparameters())
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from None
        return grid

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def model_kind(name: str, key: str = "model") -> Kind:
    if name in VARIANTS:
        return VARIANTS[name][0]
    try:
        return Kind(name)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: unknown model kind {name!r}; choose from {sorted(VARIANTS)}") from None


def _hyperparams(model: str, overrides: dict, key: str) -> Hyperparams:
    """Hyperparameters for ``model``; a variant name fixes structure and reg_mode."""
    data = dict(overrides)
    if model in VARIANTS:
        _, structure, reg_mode = VARIANTS[model]
        for name, fixed in (("structure", structure), ("reg_mode", reg_mode)):
            if name in data and data[name] != fixed.value:
                raise ConfigError(f"{key}: {name}={data[name]!r} contradicts model {model!r}")
            data[name] = fixed.value
    try:
        return Hyperparams.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


# -- data ---------------------------------------------------------------------

def load_dataset(cfg: dict) -> InteractionTensor:
    """Build the tensor named by a ``dataset`` config entry.

    Exactly one of ``csv`` (DatasetSpec fields), ``frappe`` (path),
    ``canonical`` (path) or ``synthetic`` (fixture arguments).
    """
    if not isinstance(cfg, dict) or len(cfg) != 1:
        raise ConfigError("dataset: expected exactly one of csv, frappe, canonical, synthetic")
    (source, arg), = cfg.items()
    if source == "csv":
        try:
            return preprocess(DatasetSpec.from_dict(arg))
        except TypeError as exc:
            raise ConfigError(f"dataset.csv: {exc}") from None
    if source == "frappe":
        return preprocess(frappe_spec(arg))
    if source == "canonical":
        return read_canonical(arg)
    if source == "synthetic":
        arg = dict(arg)
        try:
            schema = ContextSchema.of(*[tuple(f) for f in arg.pop("features")])
            return synth_fixture(arg.pop("m"), arg.pop("n"), schema, Signal(arg.pop("signal", "context_offset")), **arg)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"dataset.synthetic: {exc}") from None
    raise ConfigError(f"dataset: unknown source {source!r}")


# -- output -------------------------------------------------------------------

def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def report_tsv(report: EvalReport, reference: EvalReport | None = None) -> str:
    """``metric, k, mean, std`` rows; with a reference, a percentage-of-reference column."""
    if reference is None:
        return report.to_tsv()
    lines = ["metric\tk\tmean\tstd\tpct_of_reference"]
    for metric, k in report.keys():
        ref = reference.mean(metric, k) if (metric, k) in reference.values else float("nan")
        pct = 100.0 * report.mean(metric, k) / ref if ref else float("nan")
        lines.append(f"{metric}\t{k}\t{report.mean(metric, k):.6f}\t{report.std(metric, k):.6f}\t{pct:.1f}")
    return "\n".join(lines) + "\n"


def write_report(out: Path, stem: str, report: EvalReport, reference: EvalReport | None = None) -> list[Path]:
    tsv = out / f"{stem}.tsv"
    tsv.write_text(report_tsv(report, reference))
    js = out / f"{stem}.json"
    js.write_text(report.to_json())
    return [tsv, js]


def write_manifest(out: Path, command: str, cfg: RunConfig, started: float, outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "versions": {
            "ctxfact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time_seconds": round(time.time() - started, 3),
        "outputs": sorted(p.name for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)


def _tune(t: InteractionTensor, cfg: RunConfig, out: Path, outputs: list[Path]) -> Hyperparams:
    hp = cfg.hyperparameters()
    grid = cfg.make_grid()
    if grid is None:
        return hp
    best, board = grid_search(t, grid, model_kind(cfg.model), seed=cfg.grid_seed, base=hp,
                              k_list=cfg.k_list, retarget=cfg.retarget, workers=_workers(cfg))
    outputs.append(write_leaderboard(out, grid, board))
    return best


def write_leaderboard(out: Path, grid: Grid, board) -> Path:
    names = list(grid.params)
    metric, k = grid.objective
    lines = ["\t".join(names + [f"{metric}@{k}"])]
    for hp, score, _ in board:
        d = hp.to_dict()
        lines.append("\t".join([str(d[n]) for n in names] + [f"{score:.6f}"]))
    path = out / "leaderboard.tsv"
    path.write_text("\n".join(lines) + "\n")
    return path


# -- commands -----------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig, out: Path) -> list[Path]:
    t = load_dataset(cfg.dataset)
    path = out / "interactions.csv"
    sidecar = write_canonical(t, path)
    log.info("wrote %d entries (%d users, %d items) to %s", t.p, t.m, t.n, path)
    return [path, sidecar]


def cmd_train(cfg: RunConfig, out: Path) -> list[Path]:
    t = load_dataset(cfg.dataset)
    if cfg.split_seed is not None:
        t = loo_split(t, cfg.split_seed).train
    model = fit(t, cfg.hyperparameters(), model_kind(cfg.model))
    path = out / "model.json"
    save_model(model, path)
    return [path]


def cmd_evaluate(cfg: RunConfig, out: Path) -> list[Path]:
    t = load_dataset(cfg.dataset)
    report = cross_validate(t, cfg.hyperparameters(), model_kind(cfg.model), seeds=cfg.seeds,
                            k_list=cfg.k_list, retarget=cfg.retarget, workers=_workers(cfg))
    return write_report(out, "report", report)


def cmd_grid(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.grid is None:
        raise ConfigError("grid: the grid command needs a grid")
    t = load_dataset(cfg.dataset)
    outputs: list[Path] = []
    best = _tune(t, cfg, out, outputs)
    path = out / "best_hyperparams.json"
    path.write_text(json.dumps(best.to_dict(), indent=2, sort_keys=True) + "\n")
    return outputs + [path]


def cmd_experiment(cfg: RunConfig, out: Path) -> list[Path]:
    """Optional grid search, repeated evaluation, then a model fit on all data."""
    t = load_dataset(cfg.dataset)
    outputs: list[Path] = []
    hp = _tune(t, cfg, out, outputs)
    kind = model_kind(cfg.model)
    report = cross_validate(t, hp, kind, seeds=cfg.seeds, k_list=cfg.k_list,
                            retarget=cfg.retarget, workers=_workers(cfg))
    outputs += write_report(out, "report", report)
    (out / "hyperparams.json").write_text(json.dumps(hp.to_dict(), indent=2, sort_keys=True) + "\n")
    outputs.append(out / "hyperparams.json")
    model_path = out / "model.json"
    save_model(fit(t, hp, kind), model_path)
    outputs.append(model_path)
    return outputs


def _read_reference(path: str | None) -> EvalReport | None:
    if path is None:
        return None
    try:
        return EvalReport.from_dict(json.loads(Path(path).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"reference_report: cannot read {path}: {exc}") from None


def cmd_posthoc(cfg: RunConfig, out: Path) -> list[Path]:
    """Fit context factors on top of a WMF base for each model in ``posthoc_models``.

    With ``base_model`` the stored factors are used on the split ``split_seed``
    (they should have been trained on that split's training part). With
    ``base_hyperparams`` a WMF is retrained for every seed instead.
    """
    if (cfg.base_model is None) == (cfg.base_hyperparams is None):
        raise ConfigError("posthoc: set exactly one of base_model or base_hyperparams")
    names = cfg.posthoc_models or [cfg.model]
    reference = _read_reference(cfg.reference_report)
    t = load_dataset(cfg.dataset)
    outputs: list[Path] = []
    if cfg.base_model is not None:
        try:
            base = load_model(cfg.base_model)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"base_model: cannot load {cfg.base_model}: {exc}") from None
        if not isinstance(base, FactorModel) or base.kind is not Kind.WMF:
            raise ConfigError("base_model: expected a serialized WMF model")
        split = loo_split(t, cfg.split_seed or 0)
        for name in names:
            hp = _hyperparams(name, cfg.hyperparams, "hyperparams")
            if hp.k != base.k:
                raise ConfigError(f"hyperparams: k={hp.k} but base_model has k={base.k}")
            if (base.m, base.n) != (t.m, t.n):
                raise ConfigError(f"base_model: {base.m}x{base.n} factors do not match {t.m}x{t.n} data")
            model = posthoc_context_fit(base, split.train, hp, model_kind(name))
            outputs += write_report(out, f"posthoc_{name}", evaluate(model, split, cfg.k_list, cfg.retarget), reference)
            path = out / f"posthoc_{name}.model.json"
            save_model(model, path)
            outputs.append(path)
    else:
        base_hp = _hyperparams("WMF", cfg.base_hyperparams, "base_hyperparams")
        for name in names:
            hp = _hyperparams(name, cfg.hyperparams, "hyperparams")
            if hp.k != base_hp.k:
                raise ConfigError(f"hyperparams: k={hp.k} but base_hyperparams has k={base_hp.k}")
            report = posthoc_cross_validate(t, base_hp, hp, model_kind(name), seeds=cfg.seeds,
                                            k_list=cfg.k_list, retarget=cfg.retarget, workers=_workers(cfg))
            outputs += write_report(out, f"posthoc_{name}", report, reference)
    return outputs


def cmd_report(paths: list[str], reference: str | None) -> str:
    """One row per report file with the mean of every metric; optional percentage of a reference."""
    ref = _read_reference(reference)
    rows, header = [], None
    for p in paths:
        try:
            rep = EvalReport.from_dict(json.loads(Path(p).read_text()))
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"report: cannot read {p}: {exc}") from None
        keys = rep.keys()
        header = header or ["report"] + [f"{m}@{k}" for m, k in keys]
        cells = [Path(p).stem]
        for m, k in keys:
            cell = f"{rep.mean(m, k):.4f} ({rep.std(m, k):.4f})"
            if ref is not None and (m, k) in ref.values and ref.mean(m, k):
                cell += f" [{100 * rep.mean(m, k) / ref.mean(m, k):.0f}%]"
            cells.append(cell)
        rows.append("\t".join(cells))
    return "\n".join(["\t".join(header or ["report"])] + rows) + "\n"


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
    "posthoc": cmd_posthoc,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxfact", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv per-sweep diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__ and COMMANDS[name].__doc__.splitlines()[0])
        p.add_argument("config", help="JSON run config")
        p.add_argument("-o", "--output-dir")
        p.add_argument("--model")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--grid-seed", type=int)
        p.add_argument("--split-seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--k-list", type=int, nargs="+")
        p.add_argument("--retarget", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--base-model")
        p.add_argument("--reference-report")
    rep = sub.add_parser("report", help="tabulate saved JSON reports")
    rep.add_argument("reports", nargs="+")
    rep.add_argument("--reference-report")
    return parser


def _load_config(args) -> RunConfig:
    try:
        data = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("output_dir", "model", "seeds", "grid_seed", "split_seed", "workers",
                "k_list", "retarget", "base_model", "reference_report"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "report":
            sys.stdout.write(cmd_report(args.reports, args.reference_report))
            return 0
        started = time.time()
        cfg = _load_config(args)
        out = _output_dir(cfg)
        outputs = COMMANDS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, started, outputs)
        for p in outputs:
            print(p)
        return 0
    except (ConfigError, DatasetError) as exc:
        print(f"ctxfact: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("failure", exc_info=True)
        print(f"ctxfact: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
