"""Experiment driver: config parsing, study runners, CSV artifacts.

Configs are plain-text key=value files with dotted keys; command-line
flags override file values.  Every run writes deterministic CSVs plus a
sidecar file containing the fully resolved config, and removes partial
outputs if the run fails.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields as dc_fields

import numpy as np
import scipy.sparse.linalg as spla

from .analysis import (ReferenceConfig, compute_reference, convergence_table,
                       cross_section, error_norms, initial_field,
                       modulus_deviation, scheme_config)
from .coefficients import (FAMILIES, CoefficientField,
                           exact_solution_example1)
from .fem import (MagnetizationField, assemble_load, assemble_mass,
                  assemble_stiffness, ll_energy)
from .lod import (GLOBAL_LAYERS, build_lod_basis, corrector_bilinear_operator,
                  reduce_operator)
from .mesh import build_uniform_trimesh, make_mesh_pair
from .stepper import SCHEMES, Observer, lift_state, run_evolution

EXPERIMENTS = ("elliptic_convergence", "localization_decay",
               "ll_convergence", "ll_run", "cross_section")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    family: str = "constant"
    epsilon: float = 0.0          # 0 selects the family default
    alpha: float = 1e-2
    tau: float = 1e-4
    T: float = 0.1
    coarse_H: tuple = (0.5, 0.25, 0.125)
    fine_n: int = 0               # 0 -> 16x the finest coarse grid
    layers: str = "default"       # "default", "global", or an integer
    scheme: str = "cimrak"
    output_dir: str = "out"
    initial: str = "bump"         # "bump" or "exact"
    forcing: str = "none"         # "none" or "example1"
    reference_fine_n: int = 0     # 0 -> same as fine_n
    reference_tau: float = 0.0    # 0 -> same as tau
    n_samples: int = 201

    def resolved_fine_n(self) -> int:
        if self.fine_n > 0:
            return self.fine_n
        return 16 * int(round(1.0 / min(self.coarse_H)))

    def layers_for(self, H: float):
        if self.layers == "global":
            return GLOBAL_LAYERS
        if self.layers == "default":
            return max(1, math.ceil(2.0 * math.log2(1.0 / H))) \
                if H < 1.0 else 1
        return int(self.layers)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown coefficient.family {self.family!r}")
        for key in ("alpha", "tau", "T"):
            if getattr(self, key) <= 0:
                raise ConfigError(
                    f"{key} must be positive, got {getattr(self, key)!r}")
        if self.epsilon < 0:
            raise ConfigError(f"coefficient.epsilon must be >= 0, "
                              f"got {self.epsilon!r}")
        if not self.coarse_H:
            raise ConfigError("coarse_H must be non-empty")
        hs = list(self.coarse_H)
        if any(h <= 0 or h > 1 for h in hs):
            raise ConfigError(f"coarse_H entries must lie in (0, 1]: {hs}")
        if any(hs[i] <= hs[i + 1] for i in range(len(hs) - 1)):
            raise ConfigError(f"coarse_H must be strictly decreasing: {hs}")
        for h in hs:
            n = 1.0 / h
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(f"coarse_H entry {h!r} is not 1/integer")
        if self.layers not in ("default", "global"):
            try:
                val = int(self.layers)
            except ValueError:
                raise ConfigError(
                    f"layers must be 'default', 'global', or an integer, "
                    f"got {self.layers!r}") from None
            if val < 1:
                raise ConfigError(f"layers must be >= 1, got {val}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.initial not in ("bump", "exact"):
            raise ConfigError(f"unknown initial {self.initial!r}")
        if self.forcing not in ("none", "example1"):
            raise ConfigError(f"unknown forcing {self.forcing!r}")
        if self.fine_n < 0 or self.reference_fine_n < 0:
            raise ConfigError("fine_n values must be non-negative")
        if self.reference_tau < 0:
            raise ConfigError("reference.tau must be non-negative")
        if self.n_samples < 2:
            raise ConfigError(f"n_samples must be >= 2, got {self.n_samples}")
        fine = self.resolved_fine_n()
        for h in hs:
            if fine % int(round(1.0 / h)) != 0:
                raise ConfigError(
                    f"fine_n={fine} is not a multiple of coarse grid "
                    f"1/H={int(round(1.0 / h))}")


class ConfigError(ValueError):
    pass


# key-in-file -> (dataclass field, parser, serializer)
def _parse_H_list(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if "/" in item:
            num, den = item.split("/")
            out.append(float(num) / float(den))
        else:
            out.append(float(item))
    return tuple(out)


_KEYS = {
    "experiment": ("experiment", str),
    "coefficient.family": ("family", str),
    "coefficient.epsilon": ("epsilon", float),
    "alpha": ("alpha", float),
    "tau": ("tau", float),
    "T": ("T", float),
    "coarse_H": ("coarse_H", _parse_H_list),
    "fine_n": ("fine_n", int),
    "layers": ("layers", str),
    "scheme": ("scheme", str),
    "output_dir": ("output_dir", str),
    "initial": ("initial", str),
    "forcing": ("forcing", str),
    "reference.fine_n": ("reference_fine_n", int),
    "reference.tau": ("reference_tau", float),
    "n_samples": ("n_samples", int),
}
_FIELD_TO_KEY = {v[0]: k for k, v in _KEYS.items()}

PRESETS = {
    # desk-scale presets (wired into acceptance)
    "exact-desk": {"coefficient.family": "constant", "alpha": "1.0",
                   "tau": "1e-4", "T": "0.1", "coarse_H": "1/2,1/4,1/8",
                   "fine_n": "128", "layers": "global", "initial": "exact",
                   "forcing": "example1"},
    "exact-desk-lowdamp": {"coefficient.family": "constant", "alpha": "1e-2",
                           "tau": "1e-4", "T": "0.1",
                           "coarse_H": "1/2,1/4,1/8", "fine_n": "128",
                           "layers": "global", "initial": "exact",
                           "forcing": "example1"},
    "rough-desk": {"coefficient.family": "rough_int", "alpha": "1e-2",
                   "tau": "1e-4", "T": "0.02",
                   "coarse_H": "1/2,1/4,1/8,1/16", "fine_n": "256",
                   "layers": "global", "initial": "bump",
                   "reference.fine_n": "256"},
    "elliptic-desk": {"coefficient.family": "constant",
                      "coarse_H": "1/2,1/4,1/8,1/16", "fine_n": "128",
                      "layers": "global"},
    "decay-desk": {"coefficient.family": "rough_int", "coarse_H": "1/8",
                   "fine_n": "64"},
    # full-scale presets
    "exact": {"coefficient.family": "constant", "alpha": "1.0",
              "tau": "1e-5", "T": "0.5", "coarse_H": "1/2,1/4,1/8",
              "fine_n": "512", "layers": "global", "initial": "exact",
              "forcing": "example1"},
    "quasi": {"coefficient.family": "quasi_periodic", "alpha": "1e-2",
              "tau": "1e-4", "T": "0.2", "coarse_H": "1/4,1/8,1/16,1/32",
              "fine_n": "256", "reference.fine_n": "256",
              "initial": "bump"},
    "locally": {"coefficient.family": "locally_periodic", "alpha": "0.1",
                "tau": "5e-4", "T": "5e-2", "coarse_H": "1/4,1/8,1/16,1/32",
                "fine_n": "512", "reference.fine_n": "512",
                "initial": "bump"},
    "rough": {"coefficient.family": "rough_int", "alpha": "1e-2",
              "tau": "1e-4", "T": "0.2", "coarse_H": "1/4,1/8,1/16,1/32",
              "fine_n": "512", "reference.fine_n": "512",
              "initial": "bump"},
}


def parse_config(experiment: str, path: str | None = None,
                 preset: str | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    """Resolve a config from preset, file, and flag overrides (in order)."""
    raw = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        raw.update(PRESETS[preset])
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in _KEYS and key != "experiment":
                    raise ConfigError(f"unknown config key {key!r}")
                raw[key] = value
    raw.update(overrides or {})

    values = {"experiment": experiment}
    for key, value in raw.items():
        if key == "experiment":
            continue  # the subcommand decides the experiment
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        field_name, parser = _KEYS[key]
        try:
            values[field_name] = parser(value)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(
                f"malformed value for {key!r}: {value!r}") from None
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Lossless round-trippable key=value serialization."""
    lines = []
    for f in dc_fields(cfg):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        value = getattr(cfg, f.name)
        if f.name == "coarse_H":
            value = ",".join(repr(h) for h in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def load_goldens(name: str) -> list:
    """Reference table rows shipped with the package for comparison."""
    path = os.path.join(os.path.dirname(__file__), "goldens", f"{name}.csv")
    if not os.path.exists(path):
        raise ValueError(f"unknown goldens table {name!r}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return [dict(zip(header, row)) for row in rows]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.4e}"


def write_csv(path: str, header: list, rows: list):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row) + "\n")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _kappa(cfg: ExperimentConfig) -> CoefficientField:
    return CoefficientField(cfg.family, cfg.epsilon)


def _elliptic_forcing(x, y):
    """Smooth compatible load for the reaction-diffusion test problem."""
    return np.stack([np.cos(np.pi * x) * np.cos(np.pi * y),
                     np.cos(2 * np.pi * x) * np.cos(np.pi * y),
                     np.cos(np.pi * x) * np.cos(2 * np.pi * y)])


def _fine_elliptic_solve(mesh, kappa):
    A = (assemble_stiffness(mesh, kappa) + assemble_mass(mesh)).tocsc()
    rhs = assemble_load(mesh, _elliptic_forcing)
    lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    return MagnetizationField(mesh, lu.solve(rhs.T).T), A, rhs


def run_elliptic_convergence(cfg: ExperimentConfig, out_dir: str) -> list:
    kappa = _kappa(cfg)
    fine_n = cfg.resolved_fine_n()
    fine_mesh = build_uniform_trimesh(fine_n)
    truth, A, rhs = _fine_elliptic_solve(fine_mesh, kappa)
    runs = []
    for H in cfg.coarse_H:
        pair = make_mesh_pair(int(round(1.0 / H)), fine_n)
        basis = build_lod_basis(pair, kappa, cfg.layers_for(H))
        Ar = reduce_operator(basis, A.tocsr())
        coeffs = np.linalg.solve(Ar, (rhs @ basis.columns).T).T
        lift = MagnetizationField(pair.fine, basis.lift(coeffs))
        l2, h1 = error_norms(lift, truth)
        runs.append((H, l2, h1))
    report = convergence_table(runs)
    rows = []
    for i, (H, l2, h1, _) in enumerate(report.rows):
        r2 = "" if i == 0 else _fmt(report.pair_rates_l2[i - 1])
        r1 = "" if i == 0 else _fmt(report.pair_rates_h1[i - 1])
        rows.append((_fmt(H), _fmt(l2), _fmt(h1), r2, r1))
    rows.append(("Order", "", "", _fmt(report.slope_l2),
                 _fmt(report.slope_h1)))
    path = os.path.join(out_dir, "elliptic_convergence.csv")
    write_csv(path, ["H", "l2_error", "h1_error", "rate_l2", "rate_h1"],
              rows)
    return [path]


def run_localization_decay(cfg: ExperimentConfig, out_dir: str) -> list:
    kappa = _kappa(cfg)
    fine_n = cfg.resolved_fine_n()
    coarse_n = int(round(1.0 / cfg.coarse_H[0]))
    pair = make_mesh_pair(coarse_n, fine_n)
    global_basis = build_lod_basis(pair, kappa, GLOBAL_LAYERS)
    A_op = corrector_bilinear_operator(pair.fine, kappa).tocsr()
    truth, A_full, rhs = _fine_elliptic_solve(pair.fine, kappa)

    max_layers = (int(cfg.layers) if cfg.layers not in ("default", "global")
                  else 4)
    rows = []
    for ell in range(1, max_layers + 1):
        local = build_lod_basis(pair, kappa, ell)
        diff = local.columns - global_basis.columns
        energies = np.einsum("nc,nc->c", diff, A_op @ diff)
        dist = float(np.sqrt(np.max(energies)))
        Ar = reduce_operator(local, A_full.tocsr())
        coeffs = np.linalg.solve(Ar, (rhs @ local.columns).T).T
        lift = MagnetizationField(pair.fine, local.lift(coeffs))
        l2, _ = error_norms(lift, truth)
        rows.append((ell, dist, l2))
    path = os.path.join(out_dir, "localization_decay.csv")
    write_csv(path, ["layers", "basis_distance", "projection_error"], rows)
    return [path]


def _initial_coefficients(basis, kappa, field):
    """Energy-norm best coefficients of a fine initial field."""
    A = corrector_bilinear_operator(basis.pair.fine, kappa).tocsr()
    Ar = reduce_operator(basis, A)
    rhs = (A @ field.values.T).T @ basis.columns
    return np.linalg.solve(Ar, rhs.T).T


def _truth_for(cfg: ExperimentConfig):
    """Final-time truth: exact solution or cached fine reference."""
    if cfg.forcing == "example1":
        return exact_solution_example1()
    ref_n = cfg.reference_fine_n or cfg.resolved_fine_n()
    ref_tau = cfg.reference_tau or cfg.tau
    ref = ReferenceConfig(cfg.family, cfg.epsilon, cfg.alpha, ref_tau,
                          cfg.T, ref_n, cfg.scheme, cfg.initial,
                          cfg.forcing)
    return compute_reference(ref)


def run_single_lod(cfg: ExperimentConfig, H: float, observers=None):
    """Reduced-space evolution at one coarse resolution; returns the lift."""
    kappa = _kappa(cfg)
    fine_n = cfg.resolved_fine_n()
    pair = make_mesh_pair(int(round(1.0 / H)), fine_n)
    basis = build_lod_basis(pair, kappa, cfg.layers_for(H))
    scfg = scheme_config(ReferenceConfig(
        cfg.family, cfg.epsilon, cfg.alpha, cfg.tau, cfg.T, fine_n,
        cfg.scheme, cfg.initial, cfg.forcing))
    init = initial_field(pair.fine, cfg.initial)
    n_steps = int(round(cfg.T / cfg.tau))
    if abs(n_steps * cfg.tau - cfg.T) > 1e-12 * max(1.0, cfg.T):
        raise ConfigError("T must be an integer multiple of tau")
    if cfg.scheme == "an":
        start = init
    else:
        start = _initial_coefficients(basis, kappa, init)
    state = run_evolution(start, scfg, n_steps, observers=observers,
                          basis=basis)
    return lift_state(state, basis)


def run_ll_convergence(cfg: ExperimentConfig, out_dir: str) -> list:
    truth = _truth_for(cfg)
    runs = []
    for H in cfg.coarse_H:
        lift = run_single_lod(cfg, H)
        if isinstance(truth, MagnetizationField):
            l2, h1 = error_norms(lift, truth)
        else:
            l2, h1 = error_norms(lift, truth, t=cfg.T)
        runs.append((H, l2, h1, modulus_deviation(lift)))
    report = convergence_table(runs)
    rows = []
    for i, (H, l2, h1, dev) in enumerate(report.rows):
        r2 = "" if i == 0 else _fmt(report.pair_rates_l2[i - 1])
        r1 = "" if i == 0 else _fmt(report.pair_rates_h1[i - 1])
        rows.append((_fmt(H), _fmt(l2), _fmt(h1), _fmt(dev), r2, r1))
    rows.append(("Order", "", "", "", _fmt(report.slope_l2),
                 _fmt(report.slope_h1)))
    path = os.path.join(out_dir, "ll_convergence.csv")
    write_csv(path, ["H", "l2_error", "h1_error", "modulus_dev",
                     "rate_l2", "rate_h1"], rows)
    return [path]


def run_ll_run(cfg: ExperimentConfig, out_dir: str) -> list:
    rows = []

    def record(step, time, fine_field):
        rows.append((step, time,
                     ll_energy(fine_field.mesh, _kappa(cfg), fine_field),
                     modulus_deviation(fine_field)))

    run_single_lod(cfg, cfg.coarse_H[0], observers=[Observer(record)])
    path = os.path.join(out_dir, "ll_run.csv")
    write_csv(path, ["step", "time", "energy", "modulus_deviation"], rows)
    return [path]


def run_cross_section(cfg: ExperimentConfig, out_dir: str) -> list:
    truth = _truth_for(cfg)
    if not isinstance(truth, MagnetizationField):
        mesh = build_uniform_trimesh(cfg.resolved_fine_n())
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        truth = MagnetizationField(mesh, truth.value(x, y, cfg.T))
    lift = run_single_lod(cfg, cfg.coarse_H[0])
    paths = []
    for axis, tag in (("y_fixed", "y"), ("x_fixed", "x")):
        ref_cs = cross_section(truth, axis, 0.5, cfg.n_samples)
        lod_cs = cross_section(lift, axis, 0.5, cfg.n_samples)
        rows = [tuple(ref_row) + tuple(lod_row[1:])
                for ref_row, lod_row in zip(ref_cs.samples, lod_cs.samples)]
        path = os.path.join(out_dir, f"cross_section_{tag}.csv")
        write_csv(path, ["coordinate", "m1_ref", "m2_ref", "m3_ref",
                         "m1_lod", "m2_lod", "m3_lod"], rows)
        paths.append(path)
    return paths


_RUNNERS = {
    "elliptic_convergence": run_elliptic_convergence,
    "localization_decay": run_localization_decay,
    "ll_convergence": run_ll_convergence,
    "ll_run": run_ll_run,
    "cross_section": run_cross_section,
}


def run_experiment(cfg: ExperimentConfig) -> list:
    """Run a configured study; returns the list of files written."""
    cfg.validate()
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        written = _RUNNERS[cfg.experiment](cfg, out_dir)
        sidecar = os.path.join(out_dir, f"{cfg.experiment}.config.txt")
        with open(sidecar, "w", newline="\n") as fh:
            fh.write(serialize_config(cfg))
        written.append(sidecar)
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return written


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lodll",
        description="Multiscale Landau-Lifshitz experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name.replace("_", "-"))
        p.add_argument("--config", default=None)
        p.add_argument("--preset", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--layers", default=None)
        p.add_argument("--fine-n", default=None, type=int)
        p.add_argument("--scheme", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.layers is not None:
        overrides["layers"] = args.layers
    if args.fine_n is not None:
        overrides["fine_n"] = str(args.fine_n)
    if args.scheme is not None:
        overrides["scheme"] = args.scheme
    experiment = args.command.replace("-", "_")
    try:
        cfg = parse_config(experiment, path=args.config, preset=args.preset,
                           overrides=overrides)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    try:
        written = run_experiment(cfg)
    except Exception as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
