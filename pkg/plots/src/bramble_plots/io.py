"""Loading and validation of the published experiment output files."""

import csv
import json
import os


class PlotInputError(Exception):
    """Missing input directory, manifest, or CSV file."""


class PlotSchemaError(Exception):
    """A required column is absent from an input CSV."""


# figure name -> (csv file, required columns)
FIGURES = {
    "ratio-convergence": ("seneta_heyde.csv",
                          ("n", "median_ratio", "q25", "q75", "target", "used")),
    "renewal-linearity": ("renewal.csv", ("u", "R", "SE")),
    "minpos": ("minpos.csv", ("n", "median_minv_over_logn",
                              "median_running_min_centered", "used")),
    "limsup": ("limsup.csv", ("n", "t", "fraction", "used")),
    "fixedpoint-residual": ("fixed_point.csv",
                            ("t", "laplace", "branch_product", "residual", "n")),
}


def load_manifest(in_dir):
    path = os.path.join(in_dir, "manifest.json")
    if not os.path.isdir(in_dir):
        raise PlotInputError(f"input directory not found: {in_dir}")
    if not os.path.isfile(path):
        raise PlotInputError(f"manifest not found: {path}")
    with open(path) as f:
        return json.load(f)


def load_rows(in_dir, figure):
    """Rows for one figure, as dicts of floats, schema-checked."""
    name, required = FIGURES[figure]
    path = os.path.join(in_dir, name)
    if not os.path.isfile(path):
        raise PlotInputError(f"missing input file for {figure}: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise PlotSchemaError(
                    f"missing column '{col}' in {name}")
        rows = [{col: float(r[col]) for col in required} for r in reader]
    if not rows:
        raise PlotSchemaError(f"no data rows in {name}")
    return rows
