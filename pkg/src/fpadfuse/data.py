"""Dataset plumbing: manifest ingestion, the synthetic live/spoof
fingerprint generator, feature extraction with an on-disk cache, and
train/test split assembly.

Manifest format: CSV with header ``path,label,material,split``; lines
starting with ``#`` carry optional ``key: value`` metadata (sensor, version).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    EmptySplit,
    FpadError,
    MissingFile,
    ParseError,
    SingleClassTrainSplit,
)
from .imgproc import GrayImage, resize_bilinear, segment_roi
from .lpq import LpqConfig, lpq_histogram
from .quality import QualityConfig, quality_vector

log = logging.getLogger(__name__)

LABELS = ("live", "spoof")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    material: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    sensor: str = "unknown"
    version: int = 1

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def counts(self):
        out = {}
        for e in self.entries:
            key = (e.split, e.label, e.material)
            out[key] = out.get(key, 0) + 1
        return out


def load_manifest(path, check_files=True) -> DatasetManifest:
    """Parse and validate a manifest CSV.

    Validation: unique paths, known labels/splits, both classes present in
    the train split, and (optionally) every listed image on disk.
    """
    if not os.path.exists(path):
        raise ParseError(f"manifest not found: {path}")
    meta = {}
    rows = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        data_lines = []
        for line in fh:
            if line.startswith("#"):
                if ":" in line:
                    k, v = line[1:].split(":", 1)
                    meta[k.strip()] = v.strip()
                continue
            if line.strip():
                data_lines.append(line)
    reader = csv.DictReader(io.StringIO("".join(data_lines)))
    expected = {"path", "label", "material", "split"}
    if reader.fieldnames is None or set(reader.fieldnames) != expected:
        raise ParseError(f"manifest header must be exactly {sorted(expected)}")
    for lineno, row in enumerate(reader, start=2):
        if any(v is None or v == "" for v in row.values()):
            raise ParseError(f"line {lineno}: incomplete row")
        if row["label"] not in LABELS:
            raise ParseError(f"line {lineno}: bad label {row['label']!r}")
        if row["split"] not in SPLITS:
            raise ParseError(f"line {lineno}: bad split {row['split']!r}")
        rows.append(ManifestEntry(row["path"], row["label"], row["material"], row["split"]))
    paths = [e.path for e in rows]
    if len(set(paths)) != len(paths):
        dup = sorted({p for p in paths if paths.count(p) > 1})
        raise ParseError(f"duplicate manifest paths: {dup[:3]}")
    train_labels = {e.label for e in rows if e.split == "train"}
    if rows and "train" in {e.split for e in rows} and len(train_labels) < 2:
        raise SingleClassTrainSplit("train split must contain both live and spoof")
    if check_files:
        for e in rows:
            full = e.path if os.path.isabs(e.path) else os.path.join(base, e.path)
            if not os.path.exists(full):
                raise MissingFile(f"listed image missing: {e.path}")
    return DatasetManifest(
        entries=tuple(rows),
        sensor=meta.get("sensor", "unknown"),
        version=int(meta.get("version", 1)),
    )


def save_manifest(manifest: DatasetManifest, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# sensor: {manifest.sensor}\n")
        fh.write(f"# version: {manifest.version}\n")
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "material", "split"])
        for e in manifest.entries:
            writer.writerow([e.path, e.label, e.material, e.split])


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    """Oriented sinusoidal ridge pattern with class-specific degradations.

    ridge_width is the per-ridge (and per-valley) width in pixels; the full
    ridge period is twice that, matching the 5-10 px regime of 500 dpi
    sensors.  Spoof samples get boundary jitter, blur, and extra noise on
    top of the same base pattern, so live/spoof pairs from one seed are
    directly comparable.
    """

    side: int = 64
    ridge_width: float = 5.0
    orientation_amp: float = 0.15  # radians of smooth orientation wander
    live_noise: float = 0.01  # additive noise sigma on the [0,1] scale
    width_jitter: float = 2.0  # spoof ridge-boundary displacement, px
    blur_width: int = 3  # spoof box-blur kernel
    noise_sigma: float = 0.05  # spoof additive noise sigma
    seed: int = 0

    def __post_init__(self):
        if not 5.0 <= self.ridge_width <= 10.0:
            raise ValueError("ridge_width must lie in [5, 10] px")
        if self.width_jitter < 0:
            raise ValueError("width_jitter must be >= 0")


def _smooth_noise(rng, shape, sigma_px):
    """Low-frequency noise field, unit std, via separable box smoothing."""
    raw = rng.standard_normal(shape)
    k = max(3, int(2 * sigma_px) | 1)
    kernel = np.ones(k) / k
    for axis in (0, 1):
        raw = np.apply_along_axis(np.convolve, axis, raw, kernel, "same")
    raw -= raw.mean()
    sd = raw.std()
    return raw / sd if sd > 0 else raw


def synth_fingerprint(p: SynthParams, cls: str) -> GrayImage:
    """Deterministic synthetic sample; cls is 'live' or 'spoof'."""
    if cls not in LABELS:
        raise ValueError(f"class must be one of {LABELS}")
    base_rng = np.random.default_rng(np.random.SeedSequence([p.seed, 0xF1A9]))
    side = p.side
    yy, xx = np.meshgrid(np.arange(side, dtype=np.float64),
                         np.arange(side, dtype=np.float64), indexing="ij")

    theta0 = base_rng.uniform(0, np.pi)
    fx, fy = base_rng.uniform(0.3, 0.9, size=2) / side
    phase0 = base_rng.uniform(0, 2 * np.pi)
    theta = theta0 + p.orientation_amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase0)
    # ridges run along theta; intensity varies across them
    period = 2.0 * p.ridge_width
    arg = (2.0 * np.pi / period) * (xx * np.cos(theta + np.pi / 2)
                                    + yy * np.sin(theta + np.pi / 2))
    arg = arg + base_rng.uniform(0, 2 * np.pi)

    cls_rng = np.random.default_rng(
        np.random.SeedSequence([p.seed, 1 if cls == "spoof" else 2])
    )
    if cls == "spoof" and p.width_jitter > 0:
        displacement = p.width_jitter * _smooth_noise(cls_rng, (side, side), 3.0)
        arg = arg + (2.0 * np.pi / period) * displacement

    pattern = np.sin(arg)
    out = 0.5 + 0.35 * pattern

    if cls == "spoof":
        if p.blur_width > 1:
            k = np.ones(p.blur_width) / p.blur_width
            for axis in (0, 1):
                out = np.apply_along_axis(np.convolve, axis, out, k, "same")
        out = out + p.noise_sigma * cls_rng.standard_normal((side, side))
    else:
        out = out + p.live_noise * cls_rng.standard_normal((side, side))

    return GrayImage(np.clip(out * 255.0, 0, 255).astype(np.uint8))


def synth_dataset(count_per_class, params: SynthParams, out_dir, train_frac=0.8,
                  seed=None) -> DatasetManifest:
    """Write 2*count PGM files plus a manifest with a seeded train/test split."""
    seed = params.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B117]))
    entries = []
    for label in LABELS:
        n_train = int(round(train_frac * count_per_class))
        order = rng.permutation(count_per_class)
        split_of = {int(i): ("train" if rank < n_train else "test")
                    for rank, i in enumerate(order)}
        for i in range(count_per_class):
            img = synth_fingerprint(replace(params, seed=seed * 100003 + i), label)
            name = f"{label}_{i:04d}.pgm"
            img.to_pgm(os.path.join(out_dir, name))
            material = "live" if label == "live" else "synthetic-elastomer"
            entries.append(ManifestEntry(name, label, material, split_of[i]))
    manifest = DatasetManifest(entries=tuple(entries), sensor="synthetic")
    save_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    return manifest


# ---------------------------------------------------------------------------
# feature extraction and cache
# ---------------------------------------------------------------------------

def config_hash(qcfg: QualityConfig, lcfg: LpqConfig) -> str:
    blob = json.dumps(
        {"quality": qcfg.__dict__, "lpq": lcfg.__dict__},
        sort_keys=True, default=list,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def extract_features(img: GrayImage, qcfg: QualityConfig = QualityConfig(),
                     lcfg: LpqConfig = LpqConfig()) -> tuple:
    """(269-dim feature vector, ROI-cropped image).

    ROI cropping happens once, before both the quality features and LPQ.
    """
    roi = segment_roi(img, block=min(qcfg.block_m, qcfg.block_n),
                      var_threshold=qcfg.var_threshold)
    cropped = roi.crop(img)
    q = quality_vector(cropped, qcfg)
    h = lpq_histogram(cropped, lcfg)
    return np.concatenate([q.values, h.bins]), cropped


CACHE_VERSION = 1


def save_feature_cache(path, rows, qcfg, lcfg):
    """rows: list of (path, 269-vector).  Atomic write-temp-then-rename."""
    tmp = f"{path}.tmp"
    header = {"cache_version": CACHE_VERSION, "config_hash": config_hash(qcfg, lcfg)}
    with open(tmp, "w", newline="") as fh:
        fh.write("#" + json.dumps(header, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["path"] + [f"q{i}" for i in range(13)] + [f"lpq{i}" for i in range(256)])
        for p, vec in rows:
            writer.writerow([p] + [repr(float(v)) for v in vec])
    os.replace(tmp, path)


def load_feature_cache(path, qcfg, lcfg):
    """path -> 269-vector mapping; None when absent or built under another
    extraction config (stale caches are never silently reused)."""
    if not os.path.exists(path):
        return None
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ParseError(f"{path}: missing cache header")
        try:
            header = json.loads(first[1:])
        except json.JSONDecodeError:
            raise ParseError(f"{path}: malformed cache header") from None
        if header.get("config_hash") != config_hash(qcfg, lcfg):
            log.info("feature cache %s is stale (config changed)", path)
            return None
        reader = csv.reader(fh)
        next(reader)  # column header
        out = {}
        for row in reader:
            if len(row) != 1 + FEATURE_LEN:
                raise ParseError(f"{path}: bad cache row width {len(row)}")
            out[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float64)
    return out


FEATURE_LEN = 269


@dataclass
class SplitData:
    """Arrays ready for the model: images (N,1,S,S), features (N,269)."""

    imgs: np.ndarray
    feats: np.ndarray
    labels: np.ndarray  # 1 = live, 0 = spoof
    materials: list
    paths: list


def build_split(manifest: DatasetManifest, base_dir, qcfg=QualityConfig(),
                lcfg=LpqConfig(), image_side=64, cache=None, strict=False):
    """Load every manifest image and produce per-split model-ready arrays.

    Samples whose extraction fails are excluded with a logged count (or
    re-raised when strict).  cache maps path -> feature vector.
    """
    out = {}
    for split_name in SPLITS:
        entries = manifest.split(split_name)
        if not entries:
            continue
        imgs, feats, labels, materials, paths = [], [], [], [], []
        skipped = 0
        for e in entries:
            full = e.path if os.path.isabs(e.path) else os.path.join(base_dir, e.path)
            try:
                img = GrayImage.open(full)
                if cache is not None and e.path in cache:
                    vec = cache[e.path]
                    roi = segment_roi(img, block=min(qcfg.block_m, qcfg.block_n),
                                      var_threshold=qcfg.var_threshold)
                    cropped = roi.crop(img)
                else:
                    vec, cropped = extract_features(img, qcfg, lcfg)
            except FpadError as exc:
                if strict:
                    raise
                skipped += 1
                log.warning("skipping %s: %s", e.path, exc)
                continue
            imgs.append(resize_bilinear(cropped, image_side)[None, :, :])
            feats.append(vec)
            labels.append(1.0 if e.label == "live" else 0.0)
            materials.append(e.material)
            paths.append(e.path)
        if skipped:
            log.info("%s split: %d samples excluded by extraction failures",
                     split_name, skipped)
        if not imgs:
            raise EmptySplit(f"{split_name} split has no usable samples")
        out[split_name] = SplitData(
            imgs=np.stack(imgs).astype(np.float32),
            feats=np.stack(feats).astype(np.float64),
            labels=np.array(labels, dtype=np.float64),
            materials=materials,
            paths=paths,
        )
    if not out:
        raise EmptySplit("manifest holds no entries")
    return out
