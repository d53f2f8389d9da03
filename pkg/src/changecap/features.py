"""Bitemporal feature maps: binary files, manifests, synthetic data, toy extractor."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (BadMagicError, ConfigError, DataError, DimensionError,
                     PayloadMismatchError, TruncatedPayloadError)
from .vocab import tokenize

FEATURE_MAGIC = b"CGFT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class FeaturePair:
    """Features of the before (``f1``) and after (``f2``) image, each ``h x w x C``."""

    f1: np.ndarray
    f2: np.ndarray

    def __post_init__(self):
        self.f1 = np.asarray(self.f1, dtype=np.float64)
        self.f2 = np.asarray(self.f2, dtype=np.float64)
        if self.f1.shape != self.f2.shape:
            raise DimensionError(f"feature pair shapes differ: {self.f1.shape} vs {self.f2.shape}")
        if self.f1.ndim != 3:
            raise DimensionError(f"features must be h x w x C, got {self.f1.shape}")
        h, w, c = self.f1.shape
        if h * w < 2 or c < 2:
            raise DimensionError(f"need h*w >= 2 and C >= 2, got {self.f1.shape}")

    @property
    def shape(self) -> tuple:
        return self.f1.shape


@dataclass
class DatasetRecord:
    id: str
    features: FeaturePair
    captions: list  # list of word lists
    split: str = "train"
    change_type: Optional[str] = None
    quadrant: Optional[str] = None


# -- binary feature files ---------------------------------------------------

def write_feature_file(path, pair: FeaturePair) -> None:
    """Payload is float32; values not representable in float32 are rounded."""
    h, w, c = pair.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, h, w, c))
        fh.write(pair.f1.astype("<f4").tobytes())
        fh.write(pair.f2.astype("<f4").tobytes())


def load_feature_file(path) -> FeaturePair:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}")
    magic, version, h, w, c = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature file version {version}")
    if h * w < 2 or c < 2:
        raise PayloadMismatchError(f"{path}: header dimensions {h}x{w}x{c} are unusable")
    expected = 2 * h * w * c * 4
    actual = len(raw) - _HEADER.size
    if actual < expected:
        raise TruncatedPayloadError(f"{path}: expected {expected} payload bytes, got {actual}")
    if actual != expected:
        raise PayloadMismatchError(
            f"{path}: header {h}x{w}x{c} implies {expected} payload bytes, file carries {actual}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    n = h * w * c
    return FeaturePair(body[:n].reshape(h, w, c), body[n:].reshape(h, w, c))


# -- manifests --------------------------------------------------------------

def load_manifest(path) -> list[DatasetRecord]:
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise DataError(f"{path}: manifest must be a JSON array")
    records = []
    for e in entries:
        try:
            rid, ffile, caps = e["id"], e["feature_file"], e["captions"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: manifest entry missing field {exc}") from exc
        split = e.get("split", "train")
        if split not in ("train", "val", "test"):
            raise DataError(f"{path}: record {rid} has unknown split {split!r}")
        pair = load_feature_file(path.parent / ffile)
        records.append(DatasetRecord(str(rid), pair, [tokenize(s) for s in caps], split))
    return records


def write_manifest(path, records, feature_dir: str = "features") -> None:
    """Write each record's features under ``feature_dir`` and a JSON manifest."""
    path = Path(path)
    fdir = path.parent / feature_dir
    fdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in records:
        rel = f"{feature_dir}/{r.id}.cgft"
        write_feature_file(path.parent / rel, r.features)
        entries.append({"id": r.id, "feature_file": rel,
                        "captions": [" ".join(c) for c in r.captions], "split": r.split})
    path.write_text(json.dumps(entries, indent=1) + "\n", encoding="utf-8")


# -- synthetic data ---------------------------------------------------------

CHANGE_TYPES = ("build-houses", "remove-trees", "add-road", "no-change")
QUADRANTS = ("north", "south", "east", "west")

TEMPLATES = {
    "build-houses": (
        "many houses are built in the {q}",
        "some buildings appear in the {q}",
        "new houses are constructed in the {q}",
        "houses have been built in the {q} area",
        "several houses appear in the {q} of the scene",
    ),
    "remove-trees": (
        "trees are removed in the {q}",
        "some trees are cut down in the {q}",
        "the trees in the {q} have been removed",
        "vegetation disappears in the {q}",
        "many trees are gone in the {q} area",
    ),
    "add-road": (
        "a road is built in the {q}",
        "a new road appears in the {q}",
        "a road has been constructed in the {q}",
        "there is a new road in the {q} area",
        "a road is added in the {q} of the scene",
    ),
    "no-change": (
        "the scene is unchanged",
        "there is no change",
        "nothing has changed",
        "no difference between the two images",
        "the two scenes are the same",
    ),
}


@dataclass
class SyntheticConfig:
    h: int = 4
    w: int = 4
    channels: int = 16
    amplitude: float = 2.0
    captions_per_record: int = 5


def quadrant_mask(quadrant: str, h: int, w: int) -> np.ndarray:
    """Half-plane cells for a compass quadrant; north/south split rows, east/west columns."""
    m = np.zeros((h, w), dtype=bool)
    if quadrant == "north":
        m[: h // 2, :] = True
    elif quadrant == "south":
        m[h // 2:, :] = True
    elif quadrant == "west":
        m[:, : w // 2] = True
    elif quadrant == "east":
        m[:, w // 2:] = True
    else:
        raise ValueError(f"unknown quadrant {quadrant!r}")
    return m


def channel_band(change_type: str, channels: int) -> slice:
    k = CHANGE_TYPES.index(change_type)
    if k == len(CHANGE_TYPES) - 1:
        raise ValueError("no-change has no channel band")
    width = channels // (len(CHANGE_TYPES) - 1)
    return slice(k * width, (k + 1) * width)


def template_captions(change_type: str, quadrant: Optional[str]) -> list[list[str]]:
    return [t.format(q=quadrant).split() for t in TEMPLATES[change_type]]


def gen_synthetic(seed: int, count: int, cfg: Optional[SyntheticConfig] = None) -> list[DatasetRecord]:
    """Deterministic toy change-captioning set.

    ``f1`` is standard normal noise; ``f2`` adds ``cfg.amplitude`` over the
    quadrant's cells in the change type's channel band (no-change: ``f2 == f1``).
    Values are rounded to float32 so feature files round-trip exactly.
    """
    cfg = cfg or SyntheticConfig()
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if cfg.channels < len(CHANGE_TYPES) - 1:
        raise ConfigError(f"need at least {len(CHANGE_TYPES) - 1} channels for the change bands")
    if cfg.h < 2 or cfg.w < 2:
        raise ConfigError("synthetic grids need h, w >= 2 to have quadrants")
    if not 1 <= cfg.captions_per_record <= 5:
        raise ConfigError("captions_per_record must be in 1..5")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        ctype = CHANGE_TYPES[rng.integers(len(CHANGE_TYPES))]
        quad = QUADRANTS[rng.integers(len(QUADRANTS))]
        f1 = rng.standard_normal((cfg.h, cfg.w, cfg.channels)).astype(np.float32)
        f2 = f1.copy()
        if ctype != "no-change":
            cells = quadrant_mask(quad, cfg.h, cfg.w)
            band = channel_band(ctype, cfg.channels)
            f2[cells, band] += np.float32(cfg.amplitude)
        caps = template_captions(ctype, quad)
        if cfg.captions_per_record < len(caps):
            pick = np.sort(rng.choice(len(caps), cfg.captions_per_record, replace=False))
            caps = [caps[j] for j in pick]
        records.append(DatasetRecord(
            id=f"syn{seed}_{i:05d}", features=FeaturePair(f1, f2), captions=caps,
            change_type=ctype, quadrant=None if ctype == "no-change" else quad))
    return records


def assign_splits(records, fractions=(0.7, 0.15, 0.15)) -> None:
    """Deterministic contiguous train/val/test split by record order."""
    n = len(records)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    for i, r in enumerate(records):
        r.split = "train" if i < n_train else "val" if i < n_train + n_val else "test"


# -- toy extractor ----------------------------------------------------------

@dataclass
class ExtractorConfig:
    h: int = 4
    w: int = 4
    channels: int = 16
    seed: int = 0
    _proj: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def projection(self) -> np.ndarray:
        if self._proj is None:
            self._proj = np.random.default_rng(self.seed).standard_normal((3, self.channels))
        return self._proj


def toy_extract(image: np.ndarray, cfg: ExtractorConfig) -> np.ndarray:
    """Patch means over an ``h x w`` grid, then a fixed random 3->C projection.

    The projection depends only on ``cfg.seed``, so both dates of a pair share
    weights.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got {image.shape}")
    H, W, _ = image.shape
    if H % cfg.h or W % cfg.w:
        raise DimensionError(f"image {H}x{W} is not divisible into a {cfg.h}x{cfg.w} grid")
    ph, pw = H // cfg.h, W // cfg.w
    means = image.reshape(cfg.h, ph, cfg.w, pw, 3).mean(axis=(1, 3))
    return means @ cfg.projection()


def extract_pair(x1: np.ndarray, x2: np.ndarray, cfg: ExtractorConfig) -> FeaturePair:
    return FeaturePair(toy_extract(x1, cfg), toy_extract(x2, cfg))
