"""Declarative plot descriptions and CSV schema checks."""

from dataclasses import dataclass, field
import csv
import json
import os

KINDS = ("convergence", "decay", "cross_section", "coefficient_heatmap",
         "contour")

# Required columns per plot kind; extra columns are allowed.
REQUIRED_COLUMNS = {
    "convergence": ("H", "l2_error", "h1_error"),
    "decay": ("layers", "basis_distance", "projection_error"),
    "cross_section": ("coordinate", "m1_ref", "m2_ref", "m3_ref",
                      "m1_lod", "m2_lod", "m3_lod"),
    "coefficient_heatmap": ("x", "y", "value"),
    "contour": ("x", "y", "value"),
}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    input_csv: tuple          # one or more CSV paths
    output: str               # image path stem; .png and .svg are emitted
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown plot kind {self.kind!r}")
        paths = self.input_csv
        if isinstance(paths, str):
            paths = (paths,)
        object.__setattr__(self, "input_csv", tuple(paths))
        if not self.input_csv:
            raise SchemaError("input_csv must list at least one file")


def read_table(path: str, kind: str) -> dict:
    """Read a CSV into columns of strings, validating the kind's schema."""
    if not os.path.exists(path):
        raise SchemaError(f"input CSV not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty CSV")
        rows = [row for row in reader if row]
    for name in REQUIRED_COLUMNS[kind]:
        if name not in header:
            raise SchemaError(f"{path}: missing column {name!r} "
                              f"required by {kind} plots")
    cols = {name: [] for name in header}
    for row in rows:
        for name, cell in zip(header, row):
            cols[name].append(cell)
    return cols


def load_spec_file(path: str) -> list:
    """Read a JSON plot-list file into PlotSpec objects.

    The file holds a list of objects with keys kind, input_csv (string or
    list), output, and optional xlabel/ylabel/title.
    """
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise SchemaError("spec file must contain a JSON list of plots")
    specs = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise SchemaError(f"plot entry {i} is not an object")
        unknown = set(entry) - {"kind", "input_csv", "output", "xlabel",
                                "ylabel", "title"}
        if unknown:
            raise SchemaError(
                f"plot entry {i}: unknown keys {sorted(unknown)}")
        for key in ("kind", "input_csv", "output"):
            if key not in entry:
                raise SchemaError(f"plot entry {i}: missing key {key!r}")
        specs.append(PlotSpec(**entry))
    return specs
