#!/usr/bin/env python3
"""Aggregate NBER World Trade Flows extracts into the canonical panel CSV.

The extracts (one file per year, Stata .dta or CSV) carry at least the
columns `year`, `importer`, `sitc4` and `value`. World exports of a product
class are read from the rows whose importer is "World" when such rows exist,
otherwise bilateral rows are summed. Four-digit codes are truncated to
`--digits` (3 gives SITC-3 classes).

    python3 tools/nber_to_panel.py wtf62.dta ... wtf00.dta -o panel.csv

Products missing or zero in any year are dropped unless --keep-incomplete is
given; the panel loader's `floor` policy can then repair them.
"""

import argparse
import sys

import pandas as pd


def read_extract(path):
    if path.endswith(".dta"):
        return pd.read_stata(path, convert_categoricals=False)
    return pd.read_csv(path, dtype={"sitc4": str})


def world_exports(frame, digits):
    missing = {"year", "sitc4", "value"} - set(frame.columns)
    if missing:
        raise ValueError(f"missing columns: {', '.join(sorted(missing))}")
    if "importer" in frame.columns:
        world = frame[frame["importer"].astype(str).str.strip() == "World"]
        if not world.empty:
            frame = world
    code = frame["sitc4"].astype(str).str.strip().str.zfill(4).str[:digits]
    return frame.assign(product=code).groupby(["product", "year"])["value"].sum()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", help="yearly extracts (.dta or .csv)")
    ap.add_argument("-o", "--output", required=True, help="panel CSV to write")
    ap.add_argument("--digits", type=int, default=3, help="SITC code length kept (default 3)")
    ap.add_argument("--first-year", type=int, default=1962)
    ap.add_argument("--last-year", type=int, default=2000)
    ap.add_argument("--keep-incomplete", action="store_true", help="keep products with gaps (written as 0)")
    args = ap.parse_args(argv)

    series = pd.concat(world_exports(read_extract(p), args.digits) for p in args.inputs)
    series = series.groupby(level=["product", "year"]).sum()
    table = series.unstack("year").reindex(columns=range(args.first_year, args.last_year + 1))
    table = table.fillna(0.0)
    incomplete = (table <= 0).any(axis=1)
    if not args.keep_incomplete:
        if incomplete.any():
            print(f"dropping {int(incomplete.sum())} products with gaps", file=sys.stderr)
        table = table[~incomplete]
    table.columns = [f"year_{y}" for y in table.columns]
    table.index.name = "product_id"
    table.to_csv(args.output, float_format="%.17g")
    print(f"{len(table)} products x {table.shape[1]} years -> {args.output}", file=sys.stderr)


if __name__ == "__main__":
    main()
