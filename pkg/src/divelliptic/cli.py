"""Configuration-driven experiment runner.

Parses TOML (or JSON) experiment configs, executes named suites and emits
machine-readable reports: report.json, tables/*.csv and summary.txt.
Repeated runs of the same config produce byte-identical CSV output; exit
codes are 0 (all hard checks pass), 1 (a hard check failed), 2 (config
error).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                       # Python < 3.11
    import tomli as tomllib

from .fields import (FieldError, MatrixField, ScalarField, VectorField,
                     constant_matrix, constant_scalar, constant_vector,
                     isotropic_matrix, polynomial_gradient, polynomial_scalar,
                     radial_power, read_nodal_csv, tabulated_matrix,
                     tabulated_scalar, tabulated_vector, trig_gradient,
                     trig_scalar)
from .mesh import GridSpec, MeshError
from .suites import REGISTRY

log = logging.getLogger("divelliptic")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}" if path else key, "required")
    return table[key]


def _parse_grids(block: dict) -> list:
    dim = int(_require(block, "dim", "grid"))
    extents = block.get("extents") or [[0.0, 1.0]] * dim
    if len(extents) != dim:
        raise ConfigError("grid.extents", f"expected {dim} intervals")
    order = int(block.get("quadrature_order", 2))
    ladder = block.get("ladder")
    if ladder is None:
        cells = block.get("cells")
        if cells is None:
            raise ConfigError("grid.ladder", "required (or grid.cells)")
        ladder = [cells]
    grids = []
    for level in ladder:
        cells = [int(level)] * dim if np.isscalar(level) else [int(v) for v in level]
        if len(cells) != dim:
            raise ConfigError("grid.ladder", f"level {level} does not match dim {dim}")
        try:
            grids.append(GridSpec(tuple((float(lo), float(hi)) for lo, hi in extents),
                                  tuple(cells), order))
        except MeshError as exc:
            raise ConfigError("grid", str(exc)) from exc
    return grids


def _scalar_from_spec(spec: dict, space, path: str) -> ScalarField:
    family = _require(spec, "family", path)
    if family == "constant":
        return constant_scalar(float(_require(spec, "value", path)))
    if family == "trig":
        return trig_scalar(space.grid.extents,
                           _require(spec, "freqs", path),
                           float(spec.get("amplitude", 1.0)))
    if family == "polynomial":
        terms = [(t[0], t[1]) for t in _require(spec, "terms", path)]
        return polynomial_scalar(terms, nonneg=bool(spec.get("nonneg", False)))
    if family == "radial_power":
        return radial_power(_require(spec, "center", path),
                            float(_require(spec, "alpha", path)),
                            scale=float(spec.get("scale", 1.0)),
                            exponent=float(spec.get("exponent", 1.0)))
    if family == "csv":
        values = read_nodal_csv(_require(spec, "path", path), 1)[:, 0]
        if values.size != space.n_nodes:
            raise ConfigError(path, f"CSV has {values.size} rows, grid has "
                                    f"{space.n_nodes} nodes")
        return tabulated_scalar(space, values,
                                exponent=float(spec.get("exponent", math.inf)),
                                nonneg=bool(spec.get("nonneg", False)))
    raise ConfigError(path, f"unknown scalar family {family!r}")


def _vector_from_spec(spec: dict, space, path: str) -> VectorField:
    family = _require(spec, "family", path)
    if family == "constant":
        value = _require(spec, "value", path)
        if len(value) != space.dim:
            raise ConfigError(path, f"vector length {len(value)} != dim {space.dim}")
        return constant_vector(value)
    if family == "gradient_potential":
        pot = _require(spec, "potential", path)
        pfam = _require(pot, "family", f"{path}.potential")
        if pfam == "trig":
            return trig_gradient(space.grid.extents,
                                 _require(pot, "freqs", f"{path}.potential"),
                                 float(pot.get("amplitude", 1.0)))
        if pfam == "polynomial":
            return polynomial_gradient(
                _require(pot, "terms", f"{path}.potential"))
        raise ConfigError(f"{path}.potential",
                          "only trig and polynomial potentials have "
                          "analytic gradients")
    if family == "csv":
        values = read_nodal_csv(_require(spec, "path", path), space.dim)
        if values.shape[0] != space.n_nodes:
            raise ConfigError(path, f"CSV has {values.shape[0]} rows, grid has "
                                    f"{space.n_nodes} nodes")
        return tabulated_vector(space, values,
                                exponent=float(spec.get("exponent", math.inf)))
    raise ConfigError(path, f"unknown vector family {family!r}")


def _matrix_from_spec(spec: dict, space, path: str) -> MatrixField:
    family = _require(spec, "family", path)
    if family == "constant":
        value = _require(spec, "value", path)
        try:
            return constant_matrix(value,
                                   lam=spec.get("ellipticity"),
                                   bound=spec.get("bound"), d=space.dim)
        except FieldError as exc:
            raise ConfigError(path, str(exc)) from exc
    if family == "isotropic":
        coeff = _scalar_from_spec(_require(spec, "coefficient", path), space,
                                  f"{path}.coefficient")
        return isotropic_matrix(coeff,
                                lam=float(_require(spec, "ellipticity", path)),
                                bound=float(_require(spec, "bound", path)))
    if family == "csv":
        values = read_nodal_csv(_require(spec, "path", path), space.dim ** 2)
        if values.shape[0] != space.n_nodes:
            raise ConfigError(path, f"CSV has {values.shape[0]} rows, grid has "
                                    f"{space.n_nodes} nodes")
        return tabulated_matrix(space, values,
                                lam=float(_require(spec, "ellipticity", path)),
                                bound=float(_require(spec, "bound", path)))
    raise ConfigError(path, f"unknown matrix family {family!r}")


_FIELD_BUILDERS = {"A": _matrix_from_spec, "H": _vector_from_spec,
                   "c": _scalar_from_spec, "f": _scalar_from_spec}


@dataclass
class ExperimentConfig:
    """Validated experiment description consumed by the suites."""

    suite: str
    grids: list
    field_specs: dict
    suite_params: dict = dataclasses.field(default_factory=dict)
    tol_linear: float = 1e-10
    tol_outer: float = 1e-8
    tol_divfree: float = 1e-8
    out_dir: str = "out"
    seed: int = 0
    parallel: int = 0

    def field(self, name: str, space, default=None, required: bool = False):
        spec = self.field_specs.get(name)
        if spec is None:
            if required:
                raise ConfigError(f"fields.{name}", "required")
            return default
        return _FIELD_BUILDERS[name](spec, space, f"fields.{name}")

    def suite_param(self, key: str, default):
        return self.suite_params.get(key, default)

    def map(self, fn, items):
        """Apply fn over independent work items, optionally in threads.

        Results come back in input order regardless of scheduling, so
        parallel runs stay deterministic.
        """
        items = list(items)
        if self.parallel and self.parallel > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.parallel) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    # closed-form densities for the drifts that admit one; used by the
    # divfree and transformation suites to compare against exact profiles
    def exact_density_closures(self):
        spec_h = self.field_specs.get("H")
        spec_a = self.field_specs.get("A")
        if spec_h is None:
            return None
        scale = 1.0
        if spec_a is not None:
            if spec_a.get("family") != "constant" or not np.isscalar(spec_a.get("value")):
                return None
            scale = float(spec_a["value"])
        if spec_h.get("family") == "constant":
            h = np.asarray(spec_h["value"], dtype=float) / scale

            def value(x):
                return np.exp(-(x @ h))

            def gradient(x):
                return -np.exp(-(x @ h))[:, None] * h[None, :]

            return value, gradient
        if (spec_h.get("family") == "gradient_potential"
                and spec_h["potential"].get("family") == "trig"):
            pot = spec_h["potential"]
            extents = self.grids[0].extents
            v = trig_scalar(extents, pot["freqs"], float(pot.get("amplitude", 1.0)))
            g = trig_gradient(extents, pot["freqs"], float(pot.get("amplitude", 1.0)))

            def value(x):
                return np.exp(-v(x) / scale)

            def gradient(x):
                return -np.exp(-v(x) / scale)[:, None] * g(x) / scale

            return value, gradient
        return None

    def expected_density(self, space):
        closures = self.exact_density_closures()
        if closures is None:
            return None
        kind = ("exponential-profile"
                if self.field_specs["H"].get("family") == "constant"
                else "potential-profile")
        return kind, np.asarray(closures[0](space.node_coords), dtype=float)


def parse_config(path: str, out_dir=None, parallel=None, tol=None) -> ExperimentConfig:
    try:
        with open(path, "rb") as handle:
            if path.endswith(".json"):
                raw = json.load(handle)
            else:
                raw = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"parse error: {exc}") from exc

    suite = _require(raw, "suite", "")
    if suite not in REGISTRY:
        raise ConfigError("suite", f"unknown suite {suite!r}; "
                                   f"choose from {sorted(REGISTRY)}")
    grids = _parse_grids(_require(raw, "grid", ""))
    fields_block = raw.get("fields", {})
    for name in fields_block:
        if name not in _FIELD_BUILDERS:
            raise ConfigError(f"fields.{name}", "unknown field (expected A, H, c, f)")
    tols = raw.get("tolerances", {})
    out_block = raw.get("output", {})
    cfg = ExperimentConfig(
        suite=suite,
        grids=grids,
        field_specs=fields_block,
        suite_params=raw.get("suite_params", {}),
        tol_linear=float(tols.get("linear", 1e-10)),
        tol_outer=float(tols.get("outer", 1e-8)),
        tol_divfree=float(tols.get("divfree", 1e-8)),
        out_dir=out_dir or out_block.get("directory", "out"),
        seed=int(raw.get("seed", 0)),
        parallel=int(parallel or 0),
    )
    if tol is not None:
        cfg.tol_linear = float(tol)
    # validate field specs eagerly on the coarsest grid so config errors
    # surface before any solve starts
    from .mesh import build_space
    probe_space = build_space(grids[0])
    for name in fields_block:
        cfg.field(name, probe_space)
    return cfg


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_outputs(result, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    tables_dir = os.path.join(out_dir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    tables = dict(result.tables)
    if result.reports:
        rows = [(rep.name,) + tuple(row) for rep in result.reports
                for row in rep.csv_rows()]
        tables["estimates"] = (("report", "check", "lhs", "rhs", "margin",
                                "verdict"), rows)
    for name, (header, rows) in tables.items():
        path = os.path.join(tables_dir, f"{name}.csv")
        with open(path, "w", newline="") as handle:
            handle.write(",".join(header) + "\n")
            for row in rows:
                handle.write(",".join(_fmt(v) for v in row) + "\n")
    for name, artifact in result.artifacts.items():
        artifact.to_csv(os.path.join(out_dir, name))

    payload = {
        "suite": result.suite,
        "anchor": result.anchor,
        "checks": [{"name": c.name, "passed": c.passed, "hard": c.hard,
                    "detail": c.detail} for c in result.checks],
        "estimates": [r.to_dict() for r in result.reports],
        "solves": result.solves,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")

    with open(os.path.join(out_dir, "summary.txt"), "w") as handle:
        for c in result.checks:
            handle.write(c.line() + "\n")
        verdict = "PASS" if result.hard_pass else "FAIL"
        handle.write(f"RESULT: {verdict} suite={result.suite}\n")


def run(config_path: str, out_dir=None, parallel=None, tol=None) -> int:
    """Execute the configured suite; returns the process exit code."""
    try:
        cfg = parse_config(config_path, out_dir=out_dir, parallel=parallel, tol=tol)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    suite_fn, _ = REGISTRY[cfg.suite]
    log.info("running suite %s on grids %s", cfg.suite,
             [g.cells for g in cfg.grids])
    try:
        result = suite_fn(cfg)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    _write_outputs(result, cfg.out_dir)
    for check in result.checks:
        print(check.line())
    verdict = "PASS" if result.hard_pass else "FAIL"
    print(f"RESULT: {verdict} suite={cfg.suite} -> {cfg.out_dir}")
    return 0 if result.hard_pass else 1


def list_suites() -> str:
    lines = ["available suites:"]
    for name in sorted(REGISTRY):
        lines.append(f"  {name:16s} {REGISTRY[name][1]}")
    lines.append(f"{len(REGISTRY)} suites registered")
    return "\n".join(lines)


def _configure_logging():
    level = {"quiet": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("DIVFREE_LOG", "quiet"),
                                         logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = argparse.ArgumentParser(
        prog="divelliptic",
        description="verification suites for elliptic Dirichlet problems "
                    "with rough coefficients")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run a suite from a TOML/JSON config")
    runp.add_argument("config", help="path to the experiment config")
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--parallel", type=int, default=None,
                      help="run independent ladder levels on N threads")
    runp.add_argument("--tol", type=float, default=None,
                      help="override the linear solver tolerance")
    sub.add_parser("list-suites", help="list the suite registry")

    args = parser.parse_args(argv)
    if args.command == "list-suites":
        print(list_suites())
        return 0
    return run(args.config, out_dir=args.out, parallel=args.parallel, tol=args.tol)


if __name__ == "__main__":
    sys.exit(main())
