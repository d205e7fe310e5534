"""Feature records on disk, score normalization, splits, and synthetic data.

Records live in a line-delimited JSON format, one object per line with keys
``id``, ``fi``, ``ft``, ``mos``, ``dim``.  Vectors are plain decimal arrays,
so files diff and stream trivially, and Python's shortest-repr float encoding
makes save -> load an exact round trip.  Files ending in ``.gz`` are
transparently (de)compressed; archives are written with a zeroed timestamp so
identical data produces identical bytes.

The synthetic generator plants a head drawn by ``init_head``, samples feature
pairs from a standard normal, and scores them with the planted head plus
optional Gaussian noise.  It returns the planted head alongside the records
so a training run can be checked against the ground truth that produced its
data.
"""

from __future__ import annotations

import dataclasses
import gzip
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .head import FeaturePair, HeadConfig, HeadParams, _as_feature, head_forward, init_head

__all__ = [
    "DIMS",
    "DIM_TEMPLATES",
    "FeatureRecord",
    "MosTransform",
    "SynthConfig",
    "dim_counts",
    "load_records",
    "save_records",
    "normalize_mos",
    "split",
    "to_pairs",
    "synth_generate",
]

logger = logging.getLogger(__name__)

DIMS = ("quality", "consistency", "authenticity")

# Fixed text templates per assessment dimension.  Consistency has no fixed
# template: each item is assessed against its own generation prompt, so the
# entry is None.  No encoder in this package consumes these; they document
# what the text features are meant to embed.
DIM_TEMPLATES = {
    "quality": "A photo of good quality and clear details",
    "consistency": None,
    "authenticity": "A photo with genuine scene content and no synthetic artifacts",
}

_FIELD_KEYS = ("id", "fi", "ft", "mos", "dim")


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One annotated item: feature pair, mean opinion score, dimension tag."""

    id: str
    f_i: np.ndarray
    f_t: np.ndarray
    mos: float
    dim: str

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError(f"id must be a non-empty string, got {self.id!r}")
        object.__setattr__(self, "f_i", _as_feature("f_i", self.f_i))
        object.__setattr__(self, "f_t", _as_feature("f_t", self.f_t))
        object.__setattr__(self, "mos", float(self.mos))
        if not math.isfinite(self.mos):
            raise ValueError(f"mos must be finite, got {self.mos!r}")
        if self.dim not in DIMS:
            raise ValueError(f"dim must be one of {DIMS}, got {self.dim!r}")

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.dim == other.dim
            and self.mos == other.mos
            and np.array_equal(self.f_i, other.f_i)
            and np.array_equal(self.f_t, other.f_t)
        )

    def pair(self) -> FeaturePair:
        return FeaturePair(f_i=self.f_i, f_t=self.f_t)


def to_pairs(records) -> list[FeaturePair]:
    return [r.pair() for r in records]


def dim_counts(records) -> dict:
    counts = {d: 0 for d in DIMS}
    for r in records:
        counts[r.dim] += 1
    return counts


def _is_gzip(path, fmt: str) -> bool:
    if fmt == "auto":
        return str(path).endswith(".gz")
    if fmt == "jsonl":
        return False
    if fmt == "jsonl-gz":
        return True
    raise ValueError(f"fmt must be 'auto', 'jsonl', or 'jsonl-gz', got {fmt!r}")


def _parse_line(lineno: int, line: str) -> FeatureRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"line {lineno}: invalid record: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValueError(f"line {lineno}: expected an object, got {type(obj).__name__}")
    missing = [k for k in _FIELD_KEYS if k not in obj]
    if missing:
        raise ValueError(f"line {lineno}: missing fields {missing}")
    unknown = [k for k in obj if k not in _FIELD_KEYS]
    if unknown:
        raise ValueError(f"line {lineno}: unknown fields {unknown}")
    try:
        return FeatureRecord(
            id=obj["id"], f_i=obj["fi"], f_t=obj["ft"], mos=obj["mos"], dim=obj["dim"]
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"line {lineno}: {exc}") from exc


def load_records(path, fmt: str = "auto") -> list[FeatureRecord]:
    """Read records in file order, checking that feature lengths agree.

    ``fmt`` is normally left on ``auto``, which treats a ``.gz`` suffix as
    gzip-compressed; ``jsonl`` / ``jsonl-gz`` force either reading mode.
    """
    opener = gzip.open if _is_gzip(path, fmt) else open
    records: list[FeatureRecord] = []
    with opener(path, "rt", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            rec = _parse_line(lineno, line)
            if records:
                ref = records[0]
                if rec.f_i.size != ref.f_i.size:
                    raise ValueError(
                        f"line {lineno}: image feature length {rec.f_i.size} "
                        f"!= {ref.f_i.size} from line 1"
                    )
                if rec.f_t.size != ref.f_t.size:
                    raise ValueError(
                        f"line {lineno}: text feature length {rec.f_t.size} "
                        f"!= {ref.f_t.size} from line 1"
                    )
            records.append(rec)
    counts = dim_counts(records)
    logger.info(
        "loaded %d records from %s (%s)",
        len(records),
        path,
        ", ".join(f"{d}={counts[d]}" for d in DIMS),
    )
    return records


def _encode(rec: FeatureRecord) -> str:
    return json.dumps(
        {
            "id": rec.id,
            "fi": [float(v) for v in rec.f_i],
            "ft": [float(v) for v in rec.f_t],
            "mos": rec.mos,
            "dim": rec.dim,
        },
        separators=(",", ":"),
    )


def save_records(path, records, fmt: str = "auto") -> None:
    """Write records one per line; ``load_records`` restores them exactly."""
    payload = "".join(_encode(r) + "\n" for r in records).encode("utf-8")
    with open(path, "wb") as handle:
        if _is_gzip(path, fmt):
            # fixed header (no name, zero mtime) so equal data -> equal bytes
            with gzip.GzipFile(filename="", mode="wb", fileobj=handle, mtime=0) as gz:
                gz.write(payload)
        else:
            handle.write(payload)


@dataclass(frozen=True)
class MosTransform:
    """Affine map from the observed score range onto a target interval."""

    src_min: float
    src_max: float
    lo: float
    hi: float

    def apply(self, x: float) -> float:
        scale = (self.hi - self.lo) / (self.src_max - self.src_min)
        return self.lo + (x - self.src_min) * scale

    def invert(self, y: float) -> float:
        scale = (self.src_max - self.src_min) / (self.hi - self.lo)
        return self.src_min + (y - self.lo) * scale


def normalize_mos(records, lo: float = 0.0, hi: float = 5.0):
    """Min-max map the dataset's scores onto [lo, hi].

    Returns (new records, transform); the transform's ``invert`` recovers the
    original scale.  The default target matches the rescaled prediction range,
    so normalized targets and head outputs are directly comparable.
    """
    if hi <= lo:
        raise ValueError(f"target range is empty: lo={lo}, hi={hi}")
    records = list(records)
    if not records:
        raise ValueError("cannot normalize an empty dataset")
    mos = [r.mos for r in records]
    src_min, src_max = min(mos), max(mos)
    if src_min == src_max:
        raise ValueError(f"scores are constant ({src_min}); range is undefined")
    tf = MosTransform(src_min=src_min, src_max=src_max, lo=float(lo), hi=float(hi))
    out = [dataclasses.replace(r, mos=tf.apply(r.mos)) for r in records]
    return out, tf


def split(records, train_fraction: float, seed: int = 0):
    """Deterministic shuffled split into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    records = list(records)
    order = np.random.default_rng(seed).permutation(len(records))
    n_train = round(train_fraction * len(records))
    train = [records[i] for i in order[:n_train]]
    test = [records[i] for i in order[n_train:]]
    return train, test


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for a generated dataset with a known ground-truth head."""

    n: int
    d_img: int = 16
    d_txt: int = 16
    noise_sigma: float = 0.0
    seed: int = 0
    head: HeadConfig = field(default_factory=HeadConfig)
    planted: HeadParams | None = None
    # widens the freshly drawn ability map so scores cover the full range
    # instead of clustering mid-scale; ignored when a head is supplied
    ability_scale: float = 4.0

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n!r}")
        if self.d_img < 1 or self.d_txt < 1:
            raise ValueError(
                f"feature dims must be >= 1, got ({self.d_img}, {self.d_txt})"
            )
        if not math.isfinite(self.noise_sigma) or self.noise_sigma < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma!r}")
        if not math.isfinite(self.ability_scale) or self.ability_scale <= 0.0:
            raise ValueError(
                f"ability_scale must be positive, got {self.ability_scale!r}"
            )
        if self.planted is not None:
            if (self.planted.d_img, self.planted.d_txt) != (self.d_img, self.d_txt):
                raise ValueError(
                    f"planted head expects dims "
                    f"({self.planted.d_img}, {self.planted.d_txt}), "
                    f"config says ({self.d_img}, {self.d_txt})"
                )


def synth_generate(cfg: SynthConfig):
    """Generate (records, planted head); same config -> bit-identical output.

    Head init, feature draws, and noise draws use independently spawned
    streams, so the features do not move when ``noise_sigma`` changes.
    """
    head_seed, feat_seed, noise_seed = np.random.SeedSequence(cfg.seed).spawn(3)
    if cfg.planted is not None:
        planted = cfg.planted
    else:
        planted = init_head(cfg.d_img, cfg.d_txt, cfg.head, seed=head_seed)
        planted.agg_w *= cfg.ability_scale
    rng_feat = np.random.default_rng(feat_seed)
    rng_noise = np.random.default_rng(noise_seed)

    records = []
    for i in range(cfg.n):
        pair = FeaturePair(
            f_i=rng_feat.standard_normal(cfg.d_img),
            f_t=rng_feat.standard_normal(cfg.d_txt),
        )
        out = head_forward(planted, pair)
        mos = out.q_rescaled + cfg.noise_sigma * rng_noise.standard_normal()
        records.append(
            FeatureRecord(
                id=f"synth-{i:05d}",
                f_i=pair.f_i,
                f_t=pair.f_t,
                mos=mos,
                dim=DIMS[i % len(DIMS)],
            )
        )
    return records, planted
