import json
import math
import os

import numpy as np
import pytest

from llplots import PlotSpec, SchemaError, build_figure, load_spec_file, render
from llplots.cli import main


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


@pytest.fixture
def convergence_csv(tmp_path):
    """Synthetic data decaying exactly like H^3 (L2) and H^2 (H1)."""
    path = tmp_path / "conv.csv"
    rows = []
    for n in (2, 4, 8, 16):
        H = 1.0 / n
        rows.append((f"{H:.4e}", f"{0.01 * H ** 3:.16e}",
                     f"{0.1 * H ** 2:.16e}", "", ""))
    rows.append(("Order", "", "", "3.0000e+00", "2.0000e+00"))
    _write_csv(path, ["H", "l2_error", "h1_error", "rate_l2", "rate_h1"],
               rows)
    return str(path)


@pytest.fixture
def decay_csv(tmp_path):
    path = tmp_path / "decay.csv"
    rows = [(ell, f"{2.0 * math.exp(-ell):.6e}",
             f"{0.5 * math.exp(-ell):.6e}") for ell in (1, 2, 3, 4)]
    _write_csv(path, ["layers", "basis_distance", "projection_error"], rows)
    return str(path)


@pytest.fixture
def cross_section_csv(tmp_path):
    path = tmp_path / "cs.csv"
    s = np.linspace(0.0, 1.0, 33)
    rows = [(f"{t:.6e}",) + tuple(f"{v:.6e}" for v in
            (np.sin(t), np.cos(t), 0.1 * t,
             np.sin(t) + 1e-3, np.cos(t) - 1e-3, 0.1 * t))
            for t in s]
    _write_csv(path, ["coordinate", "m1_ref", "m2_ref", "m3_ref",
                      "m1_lod", "m2_lod", "m3_lod"], rows)
    return str(path)


@pytest.fixture
def grid_csv(tmp_path):
    """Integer-valued rough field with exactly five discrete levels."""
    path = tmp_path / "grid.csv"
    n = 64
    xs = np.arange(n + 1) / n  # node sampling hits the sin peaks exactly
    rows = []
    for y in xs:
        for x in xs:
            v = math.floor(5.0 + 2.0 * math.sin(2 * math.pi * x)
                           * math.sin(2 * math.pi * y))
            rows.append((f"{x:.6e}", f"{y:.6e}", v))
    _write_csv(path, ["x", "y", "value"], rows)
    return str(path)


def test_all_kinds_render(tmp_path, convergence_csv, decay_csv,
                          cross_section_csv, grid_csv):
    inputs = {"convergence": convergence_csv, "decay": decay_csv,
              "cross_section": cross_section_csv,
              "coefficient_heatmap": grid_csv, "contour": grid_csv}
    for kind, csv_path in inputs.items():
        out = tmp_path / f"fig_{kind}"
        written = render(PlotSpec(kind, (csv_path,), str(out)))
        assert [os.path.splitext(p)[1] for p in written] == [".png", ".svg"]
        for path in written:
            assert os.path.getsize(path) > 1000


def test_synthetic_cubic_matches_order3_guide(tmp_path, convergence_csv):
    spec = PlotSpec("convergence", (convergence_csv,), str(tmp_path / "f"))
    fig = build_figure(spec)
    lines = {ln.get_label(): ln for ln in fig.axes[0].get_lines()}
    h, err = lines["$L^2$ error"].get_data()
    slope = np.polyfit(np.log(h), np.log(err), 1)[0]
    assert abs(slope - 3.0) <= 1e-6
    # the plotted points lie on the order-3 guide line itself
    gh, gerr = lines["order 3"].get_data()
    np.testing.assert_allclose(err, gerr, rtol=1e-12)
    assert np.array_equal(h, gh)


def test_guide_lines_present(convergence_csv, tmp_path):
    fig = build_figure(PlotSpec("convergence", (convergence_csv,),
                                str(tmp_path / "f")))
    labels = [ln.get_label() for ln in fig.axes[0].get_lines()]
    assert "order 2" in labels and "order 3" in labels


def test_heatmap_discrete_levels(grid_csv, tmp_path):
    fig = build_figure(PlotSpec("coefficient_heatmap", (grid_csv,),
                                str(tmp_path / "f")))
    mesh = fig.axes[0].collections[0]
    levels = np.unique(mesh.get_array())
    assert levels.size == 5
    assert set(levels.astype(int)) == {3, 4, 5, 6, 7}


def test_missing_column_named_in_error(tmp_path):
    bad = tmp_path / "bad.csv"
    _write_csv(bad, ["H", "l2_error"], [(0.5, 1e-3)])
    with pytest.raises(SchemaError, match="h1_error"):
        render(PlotSpec("convergence", (str(bad),), str(tmp_path / "f")))


def test_missing_file_and_bad_kind(tmp_path):
    with pytest.raises(SchemaError, match="not found"):
        render(PlotSpec("decay", (str(tmp_path / "nope.csv"),),
                        str(tmp_path / "f")))
    with pytest.raises(SchemaError, match="kind"):
        PlotSpec("pie", ("a.csv",), "f")


def test_render_is_deterministic(tmp_path, convergence_csv):
    spec1 = PlotSpec("convergence", (convergence_csv,), str(tmp_path / "a"))
    spec2 = PlotSpec("convergence", (convergence_csv,), str(tmp_path / "b"))
    p1 = render(spec1)
    p2 = render(spec2)
    for a, b in zip(p1, p2):
        assert open(a, "rb").read() == open(b, "rb").read()


def test_spec_file_round_trip(tmp_path, convergence_csv, decay_csv):
    spec_path = tmp_path / "plots.json"
    spec_path.write_text(json.dumps([
        {"kind": "convergence", "input_csv": convergence_csv,
         "output": str(tmp_path / "conv"), "title": "Errors"},
        {"kind": "decay", "input_csv": [decay_csv],
         "output": str(tmp_path / "dec")},
    ]))
    specs = load_spec_file(str(spec_path))
    assert [s.kind for s in specs] == ["convergence", "decay"]
    assert specs[0].input_csv == (convergence_csv,)


def test_spec_file_validation(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"kind": "decay"}]))
    with pytest.raises(SchemaError, match="input_csv"):
        load_spec_file(str(bad))
    bad.write_text(json.dumps({"kind": "decay"}))
    with pytest.raises(SchemaError, match="list"):
        load_spec_file(str(bad))
    bad.write_text(json.dumps([{"kind": "decay", "input_csv": "a",
                                "output": "b", "color": "red"}]))
    with pytest.raises(SchemaError, match="color"):
        load_spec_file(str(bad))


def test_cli_exit_codes(tmp_path, convergence_csv, capsys):
    spec_path = tmp_path / "plots.json"
    spec_path.write_text(json.dumps([
        {"kind": "convergence", "input_csv": convergence_csv,
         "output": str(tmp_path / "conv")}]))
    assert main(["--spec", str(spec_path)]) == 0
    assert (tmp_path / "conv.png").exists()
    assert (tmp_path / "conv.svg").exists()
    assert main(["--spec", str(tmp_path / "missing.json")]) == 2
    spec_path.write_text(json.dumps([
        {"kind": "convergence", "input_csv": str(tmp_path / "nope.csv"),
         "output": str(tmp_path / "x")}]))
    assert main(["--spec", str(spec_path)]) == 2
