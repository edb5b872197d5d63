"""Tune, cross-validate and tabulate every model variant on one dataset.

Prints a table with the mean (std) of HR/MRR at 5 and 20 per model, then a
second table for context factors fit post-hoc on the tuned WMF, with the
percentage of the fully trained result in brackets.

    python3 scripts/compare_models.py --synthetic context_offset
    python3 scripts/compare_models.py --frappe /data/frappe/frappe.csv --k 80
"""
import argparse
import logging
import os
import sys
import time

from ctxfact.datasets import Signal, frappe_spec, preprocess, synth_fixture
from ctxfact.evaluation import Grid, cross_validate, grid_search, posthoc_cross_validate, posthoc_grid_search
from ctxfact.models import Hyperparams, variant
from ctxfact.tensor import ContextSchema

MODELS = ["ItemKNN", "WMF", "iTALSs", "iTALSs-one", "iTALS", "iTALS-one", "iTALSx", "WTF", "WTF-one"]
POSTHOC = ["iTALSs", "iTALSs-one", "iTALS", "iTALS-one", "iTALSx", "WTF", "WTF-one"]
COLUMNS = [("MRR", 5), ("MRR", 20), ("HR", 5), ("HR", 20)]


def cell(report, metric, k, reference=None):
    text = f"{report.mean(metric, k):.3f} ({report.std(metric, k):.3f})"
    if reference is not None and reference.mean(metric, k):
        text += f" [{100 * report.mean(metric, k) / reference.mean(metric, k):.0f}%]"
    return text


def table(rows):
    header = "model\t" + "\t".join(f"{m}@{k}" for m, k in COLUMNS)
    return "\n".join([header] + rows)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", choices=[s.value for s in Signal])
    src.add_argument("--frappe", metavar="CSV")
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--models", nargs="+", default=MODELS)
    ap.add_argument("--grid", choices=["small", "default"], default="small")
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--no-posthoc", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(asctime)s %(message)s")

    if args.frappe:
        t = preprocess(frappe_spec(args.frappe))
    else:
        schema = ContextSchema.of(("time", 4), ("day", 3), ("weather", 3, True))
        t = synth_fixture(400, 60, schema, args.synthetic, seed=1)
    logging.info("data: %d users, %d items, %d entries, contexts %s", t.m, t.n, t.p, t.schema.cardinalities)
    retarget = True  # repeats are legitimate in both data sources
    base = Hyperparams(k=args.k, iterations=args.iterations)

    def make_grid(kind, posthoc=False):
        if args.grid == "default":
            return Grid.default(kind)
        lams = [1e-3, 1e-2, 0.1, 1.0, 10.0] if posthoc else [1.0, 10.0, 100.0]
        return Grid({"alpha": [2.0, 10.0, 40.0], "lam": lams, "nu": [0.0, 0.5]}, ("HR", 5))

    reports, tuned, rows = {}, {}, []
    for name in args.models:
        start = time.time()
        kind, hp = variant(name, base)
        if name != "ItemKNN":
            hp, _ = grid_search(t, make_grid(kind), kind, seed=100, base=hp, retarget=retarget, workers=args.workers)
        tuned[name] = hp
        reports[name] = cross_validate(t, hp, kind, retarget=retarget, workers=args.workers)
        rows.append(name + "\t" + "\t".join(cell(reports[name], m, k) for m, k in COLUMNS))
        logging.info("%s done in %.0fs", name, time.time() - start)
    print(table(rows))

    if args.no_posthoc or "WMF" not in tuned:
        return 0
    rows = []
    for name in [n for n in POSTHOC if n in reports]:
        kind, hp = variant(name, base.replace(solver="exact") if args.k <= 32 else base)
        best, _ = posthoc_grid_search(t, make_grid(kind, posthoc=True), kind, tuned["WMF"], seed=100,
                                      base=hp, retarget=retarget, workers=args.workers)
        rep = posthoc_cross_validate(t, tuned["WMF"], best, kind, retarget=retarget, workers=args.workers)
        rows.append(name + "\t" + "\t".join(cell(rep, m, k, reports[name]) for m, k in COLUMNS))
    print()
    print(table(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
