"""Command-line entry point: ``ccgp {build, eigen, experiment, project}``.

Exit codes: 0 success, 2 bad input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .complex import CellularComplex, build_complex, complex_from_dict, load_complex, save_complex
from .errors import ArgumentError, CCGPError, ConsistencyError, ConstructionError
from .experiment import ExperimentConfig, run_experiment
from .fields import load_grid_field, project_field, save_dataset
from .gp import write_predictions
from .operators import operator_basis, save_basis

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
_INPUT_ERRORS = (ArgumentError, ConstructionError, ConsistencyError)


@dataclass
class ComplexSpec:
    kind: str = "triangulated_grid"
    dims: list = field(default_factory=lambda: [9, 9])
    weights: object = None


@dataclass
class ModelSpec:
    matern: dict = field(default_factory=lambda: {"sigma2": 1.5, "lengthscale": 1.5, "nu": 2.0})
    rd: dict = field(default_factory=lambda: {"sigma2": 1.5, "r": 1.5, "c": 1.5, "d": 1.5, "nu": 2.0})


@dataclass
class OptimizerSpec:
    lr: float = 0.1
    iters: int = 1000


@dataclass
class DataSpec:
    k_min: int = 20
    k_max: int = 100
    fractions: float = 1 / 3
    noise: float = 1e-2
    seeds: object = 20


@dataclass
class RunConfig:
    """Parsed JSON run configuration; every key is optional and defaults to the reference protocol."""

    command: str | None = None
    complex: ComplexSpec = field(default_factory=ComplexSpec)
    models: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    data: DataSpec = field(default_factory=DataSpec)
    seed: int = 0
    workers: int = 1
    out: str | None = None

    _SECTIONS = {"complex": ComplexSpec, "models": ModelSpec, "optimizer": OptimizerSpec, "data": DataSpec}

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ArgumentError("config must be a JSON object")
        top = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - top)
        if unknown:
            raise ArgumentError(f"unknown config keys: {unknown}")
        kwargs = {}
        for key, value in doc.items():
            if key in cls._SECTIONS:
                sub = cls._SECTIONS[key]
                if not isinstance(value, dict):
                    raise ArgumentError(f"config section {key!r} must be an object")
                bad = sorted(set(value) - {f.name for f in fields(sub)})
                if bad:
                    raise ArgumentError(f"unknown keys in {key!r}: {bad}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        for name, init in (("matern", cfg.models.matern), ("rd", cfg.models.rd)):
            if not isinstance(init, dict):
                raise ArgumentError(f"models.{name} must be an object")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"{path}: malformed JSON ({exc})") from exc
        except OSError as exc:
            raise ArgumentError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    def seed_list(self) -> list[int]:
        s = self.data.seeds
        if isinstance(s, int) and not isinstance(s, bool):
            if s < 1:
                raise ArgumentError("data.seeds must be a positive count or a list")
            return list(range(self.seed, self.seed + s))
        if isinstance(s, list) and s and all(isinstance(x, int) for x in s):
            return list(s)
        raise ArgumentError("data.seeds must be a positive count or a list of integers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            kind=self.complex.kind,
            dims=tuple(self.complex.dims),
            k_min=int(self.data.k_min),
            k_max=int(self.data.k_max),
            fractions=self.data.fractions,
            noise=float(self.data.noise),
            seeds=tuple(self.seed_list()),
            lr=float(self.optimizer.lr),
            iters=int(self.optimizer.iters),
            matern_init=dict(self.models.matern),
            rd_init=dict(self.models.rd),
            workers=max(1, int(self.workers)),
        )


def make_complex(spec: ComplexSpec, seed: int = 0) -> CellularComplex:
    """Build the complex described by ``spec``; ``weights`` may be null, ``"unit"``, ``"random"`` or explicit lists."""
    X = build_complex(spec.kind, spec.dims)
    w = spec.weights
    if w is None or w == "unit":
        return X
    if w == "random":
        rng = np.random.default_rng(seed)
        w = [rng.uniform(0.5, 2.0, n) for n in X.counts]
    if not isinstance(w, list):
        raise ArgumentError("complex.weights must be null, 'unit', 'random' or a list of lists")
    doc = X.to_dict()
    doc["weights"] = [list(map(float, v)) for v in w]
    return complex_from_dict(doc)


def _fmt(v: float) -> str:
    return "0" if abs(v) < 1e-10 else f"{v:.10g}"


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
        if not isinstance(cfg.data.seeds, int):
            cfg.data.seeds = [args.seed]
    if args.out is not None:
        cfg.out = args.out
    return cfg


# --- commands ---------------------------------------------------------------


def cmd_build(args) -> int:
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    X = make_complex(cfg.complex, cfg.seed)
    residual = 0
    for k in range(2, X.dimension + 1):
        prod = X.incidence(k - 1) @ X.incidence(k)
        residual = max(residual, int(np.abs(prod).max(initial=0)))
    print(X.summary())
    print(f"boundary of boundary: {'zero' if residual == 0 else f'NONZERO (max {residual})'}")
    if cfg.out:
        X.meta["config_hash"] = cfg.hash()
        save_complex(X, cfg.out)
        print(f"wrote {cfg.out}")
    return EXIT_OK if residual == 0 else EXIT_NUMERIC


def cmd_eigen(args) -> int:
    X = load_complex(args.complex)
    basis = operator_basis(X, args.operator)
    err = basis.orthonormality_error()
    print(f"operator: {basis.role}  size: {basis.size}")
    print("eigenvalues: " + ", ".join(_fmt(v) for v in basis.values))
    print(f"orthonormality error: {err:.3e}")
    basis.verify()
    if args.out:
        save_basis(basis, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _check_output_dir(out: Path, cfg_hash: str, force: bool) -> None:
    stamp = out / "config.json"
    if stamp.exists() and not force:
        try:
            old = json.loads(stamp.read_text(encoding="utf-8")).get("config_hash")
        except json.JSONDecodeError:
            old = None
        if old != cfg_hash:
            raise ArgumentError(f"{out} holds results for config {old}; rerun with --force to overwrite")


def cmd_experiment(args) -> int:
    cfg = _apply_overrides(RunConfig.load(args.config), args)
    out = Path(cfg.out or "ccgp_run")
    ecfg = cfg.experiment_config()
    h = cfg.hash()
    _check_output_dir(out, h, args.force)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"config_hash": h, "config": cfg.to_dict()})
    X = make_complex(cfg.complex, cfg.seed)

    def dump(r):
        sd = out / f"seed_{r.seed:03d}"
        sd.mkdir(exist_ok=True)
        if r.error is not None:
            _write_json(sd / "error.json", {"config_hash": h, "seed": r.seed, "error": r.error})
            print(f"seed {r.seed}: FAILED {r.error}", file=sys.stderr)
            return
        save_dataset(r.dataset, sd / "dataset.csv")
        for model, gp in r.fits.items():
            _write_json(sd / f"fit_{model}.json", {"config_hash": h, **gp.record()})
            write_predictions(sd / f"predictions_{model}.csv", r.posteriors[model], r.truth)
        line = "  ".join(
            f"{m}: " + " ".join(f"{r.metrics[m][d]['mse']:.4f}" for d in sorted(r.metrics[m])) for m in r.metrics
        )
        print(f"seed {r.seed}: mse {line}")

    _, results, rows = run_experiment(ecfg, on_result=dump, X=X)
    cols = ["model", "dim", "mse_mean", "mse_se", "nll_mean", "nll_se"]
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([row["model"], row["dim"]] + [repr(row[c]) for c in cols[2:]])
    failed = {r.seed: r.error for r in results if r.error is not None}
    _write_json(out / "metrics.json", {"config_hash": h, "metrics": rows, "failed_seeds": failed})
    for row in rows:
        print(
            f"{row['model']:>6} dim {row['dim']}: mse {row['mse_mean']:.4f} +- {row['mse_se']:.4f}"
            f"  nll {row['nll_mean']:.2f} +- {row['nll_se']:.2f}"
        )
    if len(failed) == len(results):
        print("all seeds failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_project(args) -> int:
    X = load_complex(args.complex)
    shape = None
    if X.meta.get("dims") and X.meta.get("kind") != "path":
        r, c = X.meta["dims"]
        shape = (r + 1, c + 1)
    grid = load_grid_field(args.field, args.kind, shape)
    values = project_field(grid, X)
    dim = {"scalar": 0, "vector2": 1, "pseudoscalar": 2}[args.kind]
    target = sys.stdout if args.out is None else open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(target)
        # positive values run along the stored cell orientation, negative against it
        w.writerow(["dim", "cell_id", "value_along_orientation"])
        for i, v in enumerate(values):
            w.writerow([dim, i, repr(float(v))])
    finally:
        if target is not sys.stdout:
            target.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccgp", description="Gaussian processes on cellular complexes.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--out", default=None, help="output path")
        sp.add_argument("--force", action="store_true", help="overwrite results from a different config")

    common(sub.add_parser("build", help="build a complex and check its boundary maps"))
    common(sub.add_parser("experiment", help="multi-seed CC-Matern vs reaction-diffusion experiment"))

    e = sub.add_parser("eigen", help="eigendecompose an operator of a saved complex")
    e.add_argument("complex")
    e.add_argument("--operator", default="hodge:0", help="hodge:k, super or dirac")
    e.add_argument("--out", default=None, help=".npz or .json basis file")

    pr = sub.add_parser("project", help="project a grid field CSV onto a cochain")
    pr.add_argument("field")
    pr.add_argument("complex")
    pr.add_argument("--kind", required=True, choices=["scalar", "vector2", "pseudoscalar"])
    pr.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    return p


_COMMANDS = {"build": cmd_build, "eigen": cmd_eigen, "experiment": cmd_experiment, "project": cmd_project}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return _COMMANDS[args.command](args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CCGPError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
