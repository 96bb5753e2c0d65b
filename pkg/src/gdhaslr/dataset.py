"""Manifests, synthetic benchmark data, benchmark runs and reports.

A manifest is a CSV file with header ``path,label,split``; relative paths
are resolved against the manifest's directory.  ``split`` is ``train`` or
``test``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .classifier import classify
from .gradfeat import MappingFunction, extract_features, intensity_feature
from .imagekit import (
    ImageMatrix,
    OcclusionSpec,
    apply_occlusion,
    load_grayscale,
    resize_bilinear,
    write_pgm,
)
from .solver import Dictionary, SolverConfig, build_dictionary

__all__ = [
    "ManifestError",
    "ManifestEntry",
    "Manifest",
    "PipelineConfig",
    "BenchmarkReport",
    "load_manifest",
    "write_manifest",
    "synth_dataset",
    "synth_occluder",
    "build_dictionaries",
    "sample_features",
    "rate_key",
    "run_benchmark",
    "report_to_dict",
    "emit_report",
]

log = logging.getLogger(__name__)

SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Malformed or inconsistent manifest."""


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str
    split: str


@dataclass(frozen=True)
class Manifest:
    entries: Tuple[ManifestEntry, ...]
    image_shape: Tuple[int, int] = (42, 30)
    root: Optional[Path] = None

    def display_path(self, path: Path) -> str:
        if self.root is not None:
            try:
                return path.relative_to(self.root).as_posix()
            except ValueError:
                pass
        return str(path)

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def labels(self) -> List[str]:
        return list(dict.fromkeys(e.label for e in self.split("train")))


def _validate(entries, where=lambda i: f"entry {i}"):
    seen = {}
    train_labels = set()
    for i, e in enumerate(entries):
        if e.split not in SPLITS:
            raise ManifestError(f"{where(i)}: split must be 'train' or 'test', got {e.split!r}")
        if e.path in seen:
            raise ManifestError(f"{where(i)}: duplicate path {e.path}")
        seen[e.path] = i
        if e.split == "train":
            train_labels.add(e.label)
    if not train_labels:
        raise ManifestError("manifest has no training images")
    for i, e in enumerate(entries):
        if e.split == "test" and e.label not in train_labels:
            raise ManifestError(f"{where(i)}: label {e.label} has no training images")


def load_manifest(path, image_shape=(42, 30)) -> Manifest:
    """Parse and validate a ``path,label,split`` CSV manifest."""
    path = Path(path)
    text = path.read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["path", "label", "split"]:
        raise ManifestError(f"{path}: line 1: header must be 'path,label,split'")
    root = path.parent
    entries, lines = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
        p, label, split = (c.strip() for c in row)
        if not p or not label:
            raise ManifestError(f"{path}: line {lineno}: empty path or label")
        entries.append(ManifestEntry((root / p).resolve(), label, split))
        lines.append(lineno)
    _validate(entries, where=lambda i: f"{path}: line {lines[i]}")
    return Manifest(tuple(entries), tuple(image_shape), root.resolve())


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "split"])
        for e in manifest.entries:
            try:
                p = e.path.relative_to(root).as_posix()
            except ValueError:
                p = str(e.path)
            w.writerow([p, e.label, e.split])


# ---------------------------------------------------------------------------
# synthetic data


def _smooth_profile(rng, n, harmonics=4):
    t = np.linspace(0.0, 1.0, n)
    out = np.zeros(n)
    for f in range(1, harmonics + 1):
        out += rng.normal() / f * np.cos(np.pi * f * t + rng.uniform(0.0, 2 * np.pi))
    return out


def _background(shape):
    h, w = shape
    r = np.linspace(-1.0, 1.0, h)[:, None]
    c = np.linspace(-1.0, 1.0, w)[None, :]
    # separable, so rank one
    return np.exp(-r ** 2 / 0.8) * np.exp(-c ** 2 / 0.5)


def _identity_image(rng, shape, rank=3):
    h, w = shape
    M = sum(np.outer(_smooth_profile(rng, h), _smooth_profile(rng, w)) for _ in range(rank))
    M = (M - M.min()) / (M.max() - M.min())
    return np.clip(0.15 + 0.5 * M + 0.3 * _background(shape), 0.0, 1.0)


def _relit(rng, pixels, noise=0.01):
    h, w = pixels.shape
    r = np.linspace(-1.0, 1.0, h)[:, None]
    c = np.linspace(-1.0, 1.0, w)[None, :]
    theta = rng.uniform(0.0, 2 * np.pi)
    gain = rng.uniform(0.6, 1.0) + rng.uniform(0.1, 0.3) * (np.cos(theta) * r + np.sin(theta) * c)
    return np.clip(pixels * gain + rng.normal(0.0, noise, pixels.shape), 0.0, 1.0)


def synth_dataset(classes: int, shape=(42, 30), seed: int = 0, out_dir=".", test_per_class: int = 1) -> Manifest:
    """Generate a synthetic face-like identity set on disk.

    Each class gets one training image: a rank-3 sum of smooth outer
    products over a smooth separable background.  Each test image is the
    same identity under a random linear illumination ramp with mild noise.
    Files are 8-bit PGM; ``manifest.csv`` is written alongside them.
    """
    h, w = shape
    if classes < 2:
        raise ValueError("need at least two classes")
    if h < 8 or w < 8:
        raise ValueError("images must be at least 8x8")
    if test_per_class < 0:
        raise ValueError("test_per_class must be non-negative")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    width = len(str(classes - 1))
    entries = []
    for k in range(classes):
        label = f"{k:0{width}d}"
        base = _identity_image(rng, shape)
        p = out / f"id{label}_train.pgm"
        write_pgm(ImageMatrix(base), p)
        entries.append(ManifestEntry(p.resolve(), label, "train"))
        for j in range(test_per_class):
            p = out / f"id{label}_test{j}.pgm"
            write_pgm(ImageMatrix(_relit(rng, base)), p)
            entries.append(ManifestEntry(p.resolve(), label, "test"))
    manifest = Manifest(tuple(entries), (h, w), out.resolve())
    write_manifest(manifest, out / "manifest.csv")
    return manifest


def synth_occluder(size: int = 32, seed: int = 0) -> ImageMatrix:
    """Square high-contrast texture used as the default occluder."""
    rng = np.random.default_rng(seed)
    coarse = resize_bilinear(rng.uniform(0.0, 1.0, (8, 8)), size, size)
    fine = rng.normal(0.0, 0.1, (size, size))
    return ImageMatrix(np.clip(coarse + fine, 0.0, 1.0))


# ---------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class PipelineConfig:
    mapping: MappingFunction = field(default_factory=MappingFunction)
    solver: SolverConfig = field(default_factory=SolverConfig)
    m_fraction: float = 0.10
    feature_mode: str = "gradient"
    eps: float = 1e-8

    def __post_init__(self):
        if self.feature_mode not in ("gradient", "intensity"):
            raise ValueError(f"feature_mode must be 'gradient' or 'intensity', got {self.feature_mode!r}")
        if not 0.0 < self.m_fraction <= 1.0:
            raise ValueError("m_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "feature_mode": self.feature_mode,
            "mapping": {"kind": self.mapping.kind, "u": self.mapping.u, "v": self.mapping.v},
            "m_fraction": self.m_fraction,
            "eps": self.eps,
            "solver": self.solver.to_dict(),
        }


@dataclass
class BenchmarkReport:
    subsets: Dict[str, float]
    overall: float
    records: List[dict]
    config: dict
    wall_time: float = 0.0


def rate_key(occ: Union[str, OcclusionSpec, float]) -> str:
    if isinstance(occ, OcclusionSpec):
        rate = occ.occlusion_rate
    elif occ == "none" or occ is None:
        rate = 0.0
    else:
        rate = float(occ)
    return f"{rate:.2f}"


def sample_features(img: ImageMatrix, cfg: PipelineConfig) -> List[np.ndarray]:
    if cfg.feature_mode == "intensity":
        return [intensity_feature(img)]
    return list(extract_features(img, cfg.mapping, cfg.eps).orders)


def build_dictionaries(images: Sequence[Tuple[ImageMatrix, str]], cfg: PipelineConfig) -> List[Dictionary]:
    """One dictionary per feature order (a single one in intensity mode)."""
    per_image = [(sample_features(img, cfg), label) for img, label in images]
    count = len(per_image[0][0])
    return [build_dictionary([(f[w], label) for f, label in per_image]) for w in range(count)]


# worker state for the process pool
_STATE: dict = {}


def _init_worker(dicts, cfg):
    _STATE["dicts"] = dicts
    _STATE["cfg"] = cfg


def _run_sample(job):
    index, path, shown, label, occ = job
    dicts, cfg = _STATE["dicts"], _STATE["cfg"]
    rec = {
        "index": index,
        "path": shown,
        "true_label": label,
        "occlusion": rate_key(occ),
        "verdict": None,
        "correct": False,
        "top_lists": None,
        "iterations": None,
        "converged": None,
        "error": None,
    }
    try:
        img = load_grayscale(path, *cfg.solver.image_shape)
        if isinstance(occ, OcclusionSpec):
            img = apply_occlusion(img, occ)
        verdict, diag = classify(dicts, sample_features(img, cfg), cfg.solver, cfg.m_fraction)
    except (ArithmeticError, ValueError, OSError) as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    rec["verdict"] = verdict.identity
    rec["correct"] = verdict.identity == label
    rec["top_lists"] = [list(t) for t in diag.top_lists]
    rec["iterations"] = [r.iterations for r in diag.results]
    rec["converged"] = [bool(r.converged) for r in diag.results]
    return rec


def _per_sample_spec(occ, index):
    if isinstance(occ, OcclusionSpec) and occ.anchor == "random":
        return replace(occ, seed=occ.seed + index)
    return occ


def run_benchmark(
    manifest: Manifest,
    occlusions: Sequence[Union[str, OcclusionSpec]],
    config: PipelineConfig = PipelineConfig(),
    jobs: int = 1,
    test_split: str = "test",
) -> BenchmarkReport:
    """Classify every test image under every occlusion setting.

    ``occlusions`` items are ``"none"`` or an :class:`OcclusionSpec`; a
    random-anchor spec is re-seeded per test image (``seed + index``).
    ``test_split="train"`` re-uses the training images as probes.
    Failed samples are recorded with their error and count as wrong.
    """
    t0 = time.perf_counter()
    shape = config.solver.image_shape
    train = manifest.split("train")
    tests = manifest.split(test_split)
    if not train:
        raise ManifestError("manifest has no training images")
    if not tests:
        raise ManifestError(f"manifest has no {test_split!r} images")
    images = [(load_grayscale(e.path, *shape), e.label) for e in train]
    dicts = build_dictionaries(images, config)

    jobs_list = []
    for occ in occlusions:
        for i, e in enumerate(tests):
            jobs_list.append((len(jobs_list), str(e.path), manifest.display_path(e.path), e.label,
                              _per_sample_spec(occ, i)))

    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(dicts, config)) as ex:
            records = list(ex.map(_run_sample, jobs_list, chunksize=1))
    else:
        _init_worker(dicts, config)
        records = [_run_sample(j) for j in jobs_list]

    subsets: Dict[str, List[bool]] = {}
    for rec in records:
        subsets.setdefault(rec["occlusion"], []).append(rec["correct"])
    accuracy = {k: sum(v) / len(v) for k, v in subsets.items()}
    overall = sum(r["correct"] for r in records) / len(records)
    cfg_dict = config.to_dict()
    cfg_dict["test_split"] = test_split
    cfg_dict["occlusions"] = [_occ_summary(o) for o in occlusions]
    return BenchmarkReport(accuracy, overall, records, cfg_dict, time.perf_counter() - t0)


def _occ_summary(occ):
    if not isinstance(occ, OcclusionSpec):
        return {"rate": 0.0}
    anchor = occ.anchor if isinstance(occ.anchor, str) else list(occ.anchor)
    return {"rate": occ.occlusion_rate, "anchor": anchor, "seed": occ.seed,
            "occluder_shape": list(occ.occluder.shape)}


# ---------------------------------------------------------------------------
# report output


def report_to_dict(report: BenchmarkReport, include_timing: bool = False) -> dict:
    out = {
        "subsets": dict(report.subsets),
        "overall": report.overall,
        "records": report.records,
        "config": report.config,
    }
    if include_timing:
        out["wall_time"] = report.wall_time
    return out


def emit_report(report: BenchmarkReport, path, fmt: str = "json", include_timing: bool = False) -> Path:
    """Write the report as JSON or CSV.

    Wall time is left out unless ``include_timing`` so that identical runs
    produce identical bytes.
    """
    path = Path(path)
    if fmt == "json":
        text = json.dumps(report_to_dict(report, include_timing), indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subset", "accuracy"])
        for key, acc in report.subsets.items():
            w.writerow([key, repr(acc)])
        w.writerow(["overall", repr(report.overall)])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text)
    return path
