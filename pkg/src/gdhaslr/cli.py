"""Command-line front end.

Subcommands: ``extract``, ``recognize``, ``synth``, ``occlude``, ``bench``.

Settings resolve as command-line flags, then the JSON file named by the
``HASLR_CONFIG`` environment variable, then built-in defaults.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

from .classifier import classify
from .dataset import (
    PipelineConfig,
    build_dictionaries,
    emit_report,
    load_manifest,
    run_benchmark,
    sample_features,
    synth_dataset,
    synth_occluder,
)
from .gradfeat import MappingFunction, extract_features
from .imagekit import ImageMatrix, OcclusionSpec, apply_occlusion, load_grayscale, read_raster, write_pgm
from .solver import PenaltyFunction, SolverConfig, SolverDivergence

log = logging.getLogger("gdhaslr")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

CONFIG_ENV = "HASLR_CONFIG"


@dataclass
class CliConfig:
    mapping: str = "tanh"
    u: float = 7.3
    v: float = 0.51
    alpha: float = 100.0
    beta: float = 1.0
    penalty: str = "nig"
    delta: float = 1.0
    gamma: float = 1e-6
    gent_a: float = 1.0
    gent_b: float = 1.0
    laplace_b: float = 1.0
    w0: float = 20.0
    m_fraction: float = 0.10
    rel_tol: float = 1e-6
    max_iters: int = 500
    seed: int = 0
    feature_mode: str = "gradient"
    shape: Tuple[int, int] = (42, 30)
    eps: float = 1e-8

    def penalty_function(self) -> PenaltyFunction:
        kind = {"gent": "generalized_t"}.get(self.penalty, self.penalty)
        params = {
            "constant": {"w0": self.w0},
            "laplace": {"b": self.laplace_b},
            "generalized_t": {"a": self.gent_a, "b": self.gent_b},
            "nig": {"delta": self.delta, "gamma": self.gamma},
        }
        if kind not in params:
            raise ValueError(f"unknown penalty {self.penalty!r}")
        return PenaltyFunction.make(kind, **params[kind])

    def pipeline(self) -> PipelineConfig:
        solver = SolverConfig(
            image_shape=tuple(self.shape),
            alpha=self.alpha,
            beta=self.beta,
            penalty=self.penalty_function(),
            rel_tol=self.rel_tol,
            max_iters=self.max_iters,
        )
        return PipelineConfig(
            mapping=MappingFunction(self.mapping, self.u, self.v),
            solver=solver,
            m_fraction=self.m_fraction,
            feature_mode=self.feature_mode,
            eps=self.eps,
        )


DEFAULTS = CliConfig()
_CONFIG_FIELDS = {f.name: f for f in fields(CliConfig)}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _parse_shape(text) -> Tuple[int, int]:
    if isinstance(text, (list, tuple)):
        h, w = text
    else:
        try:
            h, w = (int(s) for s in str(text).lower().split("x"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"shape must look like 42x30, got {text!r}") from None
    if int(h) < 3 or int(w) < 3:
        raise argparse.ArgumentTypeError("shape dimensions must be at least 3")
    return int(h), int(w)


def _parse_rates(text):
    try:
        rates = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"rates must be comma-separated numbers, got {text!r}") from None
    if not rates or any(not 0.0 <= r < 1.0 for r in rates):
        raise argparse.ArgumentTypeError("each rate must lie in [0, 1)")
    return rates


def _parse_anchor(text):
    if text == "random":
        return text
    try:
        r, c = (int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("anchor must be 'random' or 'ROW,COL'") from None
    return r, c


def _d(name):
    value = getattr(DEFAULTS, name)
    if name == "shape":
        value = "x".join(str(s) for s in value)
    return f"(default: {value})"


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline settings")
    g.add_argument("--mapping", choices=["arctan", "tanh", "softsign", "sigmoid"],
                   help=f"S-shaped mapping function {_d('mapping')}")
    g.add_argument("--u", type=float, help=f"mapping scale {_d('u')}")
    g.add_argument("--v", type=float, help=f"mapping shift {_d('v')}")
    g.add_argument("--alpha", type=float, help=f"nuclear-norm weight {_d('alpha')}")
    g.add_argument("--beta", type=float, help=f"ADMM penalty parameter {_d('beta')}")
    g.add_argument("--penalty", choices=["constant", "laplace", "gent", "nig"],
                   help=f"sparsity penalty {_d('penalty')}")
    g.add_argument("--delta", type=float, help=f"NIG delta {_d('delta')}")
    g.add_argument("--gamma", type=float, help=f"NIG gamma {_d('gamma')}")
    g.add_argument("--gent-a", dest="gent_a", type=float, help=f"generalized-t a {_d('gent_a')}")
    g.add_argument("--gent-b", dest="gent_b", type=float, help=f"generalized-t b {_d('gent_b')}")
    g.add_argument("--laplace-b", dest="laplace_b", type=float, help=f"Laplace scale {_d('laplace_b')}")
    g.add_argument("--w0", type=float, help=f"constant lasso weight {_d('w0')}")
    g.add_argument("--m-fraction", dest="m_fraction", type=float,
                   help=f"fraction of classes kept per order for polling {_d('m_fraction')}")
    g.add_argument("--rel-tol", dest="rel_tol", type=float, help=f"ADMM relative-change tolerance {_d('rel_tol')}")
    g.add_argument("--max-iters", dest="max_iters", type=int, help=f"ADMM iteration cap {_d('max_iters')}")
    g.add_argument("--seed", type=int, help=f"random seed {_d('seed')}")
    g.add_argument("--feature-mode", dest="feature_mode", choices=["gradient", "intensity"],
                   help=f"feature domain {_d('feature_mode')}")
    g.add_argument("--shape", type=_parse_shape, help=f"image size HxW {_d('shape')}")
    g.add_argument("--eps", type=float, help=f"direction-ratio guard {_d('eps')}")
    g.add_argument("--verbose", action="store_true", help="log progress to standard error")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="haslr",
        description="Occlusion-robust recognition with gradient-direction features "
                    "and sparse + low-rank regression.",
        epilog=f"Settings may also come from a JSON file named by ${CONFIG_ENV}; flags take precedence.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("extract", parents=[common], help="write the per-order feature vectors of an image")
    p.add_argument("image")
    p.add_argument("-o", "--output", help="output JSON path (default: standard output)")

    p = sub.add_parser("recognize", parents=[common], help="identify one image against a manifest")
    p.add_argument("image")
    p.add_argument("--manifest", required=True, help="CSV manifest with training images")
    p.add_argument("--diagnostics", help="write residues and solver details as JSON here")
    p.add_argument("--figure", help="write the error-map singular-value plot (PNG) here")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic identity set")
    p.add_argument("outdir")
    p.add_argument("--classes", type=int, default=10, help="number of identities (default: 10)")
    p.add_argument("--test-per-class", type=int, default=1, help="test images per identity (default: 1)")

    p = sub.add_parser("occlude", parents=[common], help="paste an occluder onto an image")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True, help="output PGM path")
    p.add_argument("--rate", type=float, required=True, help="occluded fraction of the image area")
    p.add_argument("--occluder", help="occluder image (default: synthetic texture)")
    p.add_argument("--anchor", type=_parse_anchor, default="random", help="'random' or ROW,COL (default: random)")

    p = sub.add_parser("bench", parents=[common], help="run the occlusion benchmark")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="CSV manifest")
    src.add_argument("--synth", type=int, metavar="N", help="generate N synthetic identities")
    p.add_argument("--rates", type=_parse_rates, default=[0.0], help="comma-separated occlusion rates (default: 0.0)")
    p.add_argument("-o", "--output", default="report.json", help="report path (default: report.json)")
    p.add_argument("--format", choices=["json", "csv"], default="json", help="report format (default: json)")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: available parallelism)")
    p.add_argument("--occluder", help="occluder image (default: synthetic square texture)")
    p.add_argument("--workdir", help="where --synth writes its images (default: temporary directory)")
    p.add_argument("--self-test", action="store_true", help="probe with the training images")
    p.add_argument("--timing", action="store_true", help="include wall time in the JSON report")
    p.add_argument("--no-figures", action="store_true", help="skip the accuracy plot")
    return parser


def load_config(args: argparse.Namespace, environ=None) -> CliConfig:
    """Merge flags over ``$HASLR_CONFIG`` over defaults."""
    environ = os.environ if environ is None else environ
    merged = asdict(DEFAULTS)
    cfg_path = environ.get(CONFIG_ENV)
    if cfg_path:
        try:
            data = json.loads(Path(cfg_path).read_text())
        except OSError as exc:
            raise CliError(f"cannot read {CONFIG_ENV} file {cfg_path}: {exc}", EXIT_IO) from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{CONFIG_ENV} file {cfg_path} is not valid JSON: {exc}", EXIT_ARGS) from None
        if not isinstance(data, dict):
            raise CliError(f"{CONFIG_ENV} file must hold a JSON object", EXIT_ARGS)
        unknown = set(data) - set(_CONFIG_FIELDS)
        if unknown:
            raise CliError(f"unknown keys in {CONFIG_ENV} file: {sorted(unknown)}", EXIT_ARGS)
        merged.update(data)
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    try:
        merged["shape"] = _parse_shape(merged["shape"])
    except argparse.ArgumentTypeError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None
    return CliConfig(**merged)


# ---------------------------------------------------------------------------
# subcommands


def _write_json(obj, path):
    text = json.dumps(obj, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_extract(args, cfg: CliConfig) -> int:
    img = load_grayscale(args.image, *cfg.shape)
    mapping = MappingFunction(cfg.mapping, cfg.u, cfg.v)
    feats = extract_features(img, mapping, cfg.eps)
    out = {f"order{w}": feats[w].tolist() for w in (1, 2, 3)}
    out["shape"] = list(cfg.shape)
    out["mapping"] = {"kind": mapping.kind, "u": mapping.u, "v": mapping.v}
    _write_json(out, args.output)
    return EXIT_OK


def cmd_recognize(args, cfg: CliConfig) -> int:
    pipe = cfg.pipeline()
    manifest = load_manifest(args.manifest, cfg.shape)
    train = [(load_grayscale(e.path, *cfg.shape), e.label) for e in manifest.split("train")]
    dicts = build_dictionaries(train, pipe)
    img = load_grayscale(args.image, *cfg.shape)
    verdict, diag = classify(dicts, sample_features(img, pipe), pipe.solver, pipe.m_fraction)
    print(f"identity={verdict.identity} frequency={verdict.frequency} "
          f"tie_broken={str(verdict.tie_broken).lower()}")
    if args.diagnostics:
        _write_json({
            "identity": verdict.identity,
            "frequencies": verdict.frequencies,
            "average_ranks": verdict.average_ranks,
            "tie_broken": verdict.tie_broken,
            "class_ids": list(diag.table.class_ids),
            "residues": [r.tolist() for r in diag.table.residues],
            "top_lists": [list(t) for t in diag.top_lists],
            "solver": [
                {"iterations": r.iterations, "converged": r.converged,
                 "primal_residual": r.primal_residual, "x": r.x.tolist()}
                for r in diag.results
            ],
            "config": pipe.to_dict(),
        }, args.diagnostics)
    if args.figure:
        from .plotting import singular_value_curves

        singular_value_curves([r.L for r in diag.results], cfg.shape, args.figure)
    return EXIT_OK


def cmd_synth(args, cfg: CliConfig) -> int:
    manifest = synth_dataset(args.classes, cfg.shape, cfg.seed, args.outdir, args.test_per_class)
    print(Path(args.outdir) / "manifest.csv")
    log.info("wrote %d images", len(manifest.entries))
    return EXIT_OK


def _occluder(path, cfg: CliConfig) -> ImageMatrix:
    if path is None:
        return synth_occluder(32, cfg.seed)
    return ImageMatrix(read_raster(path))


def cmd_occlude(args, cfg: CliConfig) -> int:
    img = load_grayscale(args.image, *cfg.shape)
    spec = OcclusionSpec(_occluder(args.occluder, cfg), args.rate, args.anchor, cfg.seed)
    write_pgm(apply_occlusion(img, spec), args.output)
    return EXIT_OK


def cmd_bench(args, cfg: CliConfig) -> int:
    pipe = cfg.pipeline()
    tmp = None
    try:
        if args.synth is not None:
            workdir = args.workdir
            if workdir is None:
                tmp = tempfile.TemporaryDirectory(prefix="haslr-synth-")
                workdir = tmp.name
            manifest = synth_dataset(args.synth, cfg.shape, cfg.seed, workdir)
        else:
            manifest = load_manifest(args.manifest, cfg.shape)
        occluder = _occluder(args.occluder, cfg)
        occlusions = [
            "none" if r == 0.0 else OcclusionSpec(occluder, r, "random", cfg.seed)
            for r in args.rates
        ]
        jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
        if jobs < 1:
            raise ValueError("--jobs must be positive")
        report = run_benchmark(manifest, occlusions, pipe, jobs=jobs,
                               test_split="train" if args.self_test else "test")
    finally:
        if tmp is not None:
            tmp.cleanup()
    emit_report(report, args.output, args.format, include_timing=args.timing)
    if not args.no_figures:
        from .plotting import accuracy_curve, figure_path

        accuracy_curve(report.subsets, figure_path(args.output, "accuracy"))
    failures = [r for r in report.records if r["error"]]
    for r in failures:
        log.warning("sample %s failed: %s", r["path"], r["error"])
    print(f"overall={report.overall:.4f}")
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "recognize": cmd_recognize,
    "synth": cmd_synth,
    "occlude": cmd_occlude,
    "bench": cmd_bench,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"haslr: error: {exc}", file=sys.stderr)
        return exc.code
    except SolverDivergence as exc:
        print(f"haslr: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, UnicodeDecodeError) as exc:
        print(f"haslr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"haslr: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"haslr: error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
