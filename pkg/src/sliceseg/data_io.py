"""On-disk formats and the synthetic sequential-slice benchmark.

Three byte-exact formats:

* raster (.psr): magic "PSR1", little-endian u32 width/height/channels,
  u8 dtype tag (0 = f32, 1 = u8), then the row-major channel-last payload.
* sequence metadata: one ``sequence.json`` per sequence directory listing
  image/mask filenames, z positions and corruption flags.
* checkpoint (.psc): magic "PSC1", u32 version (= 1), u32 header length,
  a JSON header (config echo, frozen-tensor names, tensor manifest with
  names/shapes/byte offsets), then concatenated f32 LE tensor payloads.

The generator lays ``<root>/<sequence_id>/{sequence.json, slice_<t>.psr,
mask_<t>.psr}``: drifting elliptical blobs over a textured background,
with optional per-slice heavy-noise corruption that never touches the
ground-truth mask. Everything is deterministic per seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError, FormatError, UnsupportedVersionError
from .rng import substream

RASTER_MAGIC = b"PSR1"
CHECKPOINT_MAGIC = b"PSC1"
CHECKPOINT_VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1
MAX_EXTENT = 1 << 20

# Scale (micrometers) for similarity-estimated distances; chosen to land
# inside the synthetic z-gap range so the modulation behaves comparably
# whether distances come from metadata or from features.
DISTANCE_SCALE_UM = 10.0


# ------------------------------------------------------------------ rasters


def write_raster(path: str | Path, array: np.ndarray) -> None:
    """Write a 2-D or channel-last 3-D array as an f32 or u8 raster."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ContractError(f"raster payload must be 2-D or 3-D, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        tag, out = DTYPE_U8, arr
    else:
        tag, out = DTYPE_F32, arr.astype("<f4")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(RASTER_MAGIC)
        f.write(struct.pack("<IIIB", w, h, c, tag))
        f.write(np.ascontiguousarray(out).tobytes())


def read_raster(path: str | Path) -> np.ndarray:
    """Read a raster back as (H, W, C) float32 or uint8."""
    blob = Path(path).read_bytes()
    if blob[:4] != RASTER_MAGIC:
        raise FormatError(f"bad raster magic {blob[:4]!r}", offset=0)
    if len(blob) < 17:
        raise FormatError("truncated raster header", offset=len(blob))
    w, h, c, tag = struct.unpack_from("<IIIB", blob, 4)
    if max(w, h, c) > MAX_EXTENT:
        raise FormatError(f"raster dimensions {w}x{h}x{c} overflow sane bounds", offset=4)
    if tag == DTYPE_F32:
        dtype, itemsize = np.dtype("<f4"), 4
    elif tag == DTYPE_U8:
        dtype, itemsize = np.dtype(np.uint8), 1
    else:
        raise FormatError(f"unknown raster dtype tag {tag}", offset=16)
    need = 17 + w * h * c * itemsize
    if len(blob) < need:
        raise FormatError(
            f"raster payload truncated: header declares {need} bytes, file has {len(blob)}",
            offset=len(blob),
        )
    data = np.frombuffer(blob, dtype=dtype, count=w * h * c, offset=17)
    return data.reshape(h, w, c).copy()


# -------------------------------------------------------------- checkpoints


def save_checkpoint(
    path: str | Path,
    tensors: dict[str, np.ndarray],
    config: dict,
    frozen: list[str] | None = None,
) -> None:
    """Write named tensors plus a config document; payloads are f32 LE."""
    manifest = []
    offset = 0
    payloads = []
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=np.float64).astype("<f4")  # astype copies contiguously
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        payloads.append(a.tobytes())
        offset += len(payloads[-1])
    header = json.dumps(
        {"config": config, "frozen": sorted(frozen or []), "tensors": manifest}
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict, list[str]]:
    """Read back (tensors, config, frozen names); tensors come out float64."""
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}", offset=0)
    if len(blob) < 12:
        raise FormatError("truncated checkpoint header", offset=len(blob))
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})",
            offset=4,
        )
    if len(blob) < 12 + header_len:
        raise FormatError("checkpoint header extends past end of file", offset=len(blob))
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    base = 12 + header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        if start + 4 * count > len(blob):
            raise FormatError(
                f"tensor {entry['name']!r} payload truncated", offset=len(blob)
            )
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = data.reshape(shape).astype(np.float64)
    return tensors, header["config"], list(header.get("frozen", []))


# ------------------------------------------------------ sequences on disk


@dataclass
class SliceData:
    image: np.ndarray  # (H, W, 1) float64 in [0, 1]
    mask: np.ndarray | None  # (H, W) uint8 in {0, 1}
    z_position_um: float | None
    corrupted: bool = False


@dataclass
class SliceSequence:
    sequence_id: str
    slices: list[SliceData] = field(default_factory=list)


def load_sequence(seq_dir: str | Path) -> SliceSequence:
    seq_dir = Path(seq_dir)
    meta = json.loads((seq_dir / "sequence.json").read_text())
    slices = []
    for rec in meta["slices"]:
        image = read_raster(seq_dir / rec["image"]).astype(np.float64)
        mask = None
        if rec.get("mask"):
            m = read_raster(seq_dir / rec["mask"])
            mask = m[:, :, 0].astype(np.uint8)
        slices.append(
            SliceData(
                image=image,
                mask=mask,
                z_position_um=rec.get("z_position_um"),
                corrupted=bool(rec.get("corrupted", False)),
            )
        )
    return SliceSequence(sequence_id=meta["sequence_id"], slices=slices)


def load_dataset(root: str | Path) -> list[SliceSequence]:
    root = Path(root)
    seq_dirs = sorted(d for d in root.iterdir() if (d / "sequence.json").exists())
    return [load_sequence(d) for d in seq_dirs]


# --------------------------------------------------------------- synthesis


@dataclass
class SynthConfig:
    num_sequences: int = 4
    slices_per_sequence: int = 6
    image_size: int = 64
    min_blobs: int = 1
    max_blobs: int = 3
    z_gap_range: tuple[float, float] = (2.0, 40.0)
    drift_per_um: float = 0.03
    intensity_jitter: float = 0.03
    noise_sigma: float = 0.02
    corrupt_prob: float = 0.0
    corrupt_noise_sigma: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.num_sequences < 1 or self.slices_per_sequence < 1:
            raise ContractError("sequence and slice counts must be >= 1")
        if not (0.0 <= self.corrupt_prob <= 1.0):
            raise DomainError(f"corrupt_prob must be in [0, 1], got {self.corrupt_prob}")


@dataclass
class Ellipse:
    cx: float
    cy: float
    ax: float
    ay: float
    angle: float


@dataclass
class SynthSlice:
    """One generated slice, with the clean render kept for analysis."""

    image: np.ndarray
    clean_image: np.ndarray
    mask: np.ndarray
    z_position_um: float
    corrupted: bool
    blobs: list[Ellipse]


def ellipse_mask(blobs: list[Ellipse], size: int) -> np.ndarray:
    """Exact per-pixel membership union of the ellipses (the oracle form)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    inside = np.zeros((size, size), dtype=bool)
    for b in blobs:
        dx, dy = xx - b.cx, yy - b.cy
        u = dx * np.cos(b.angle) + dy * np.sin(b.angle)
        v = -dx * np.sin(b.angle) + dy * np.cos(b.angle)
        inside |= (u / b.ax) ** 2 + (v / b.ay) ** 2 <= 1.0
    return inside.astype(np.uint8)


def _render_clean(blobs: list[Ellipse], size: int, jitter: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    q_min = np.full((size, size), np.inf)
    for b in blobs:
        dx, dy = xx - b.cx, yy - b.cy
        u = dx * np.cos(b.angle) + dy * np.sin(b.angle)
        v = -dx * np.sin(b.angle) + dy * np.cos(b.angle)
        q_min = np.minimum(q_min, (u / b.ax) ** 2 + (v / b.ay) ** 2)
    # Soft-edged bright blobs on a darker background.
    img = 0.2 + 0.6 / (1.0 + np.exp(-3.0 * (1.0 - q_min))) + jitter
    return np.clip(img, 0.0, 1.0)


def generate_sequence(cfg: SynthConfig, index: int) -> tuple[str, list[SynthSlice]]:
    """All slices of sequence `index`, fully determined by (seed, index)."""
    rng = substream(cfg.seed, f"synth/{index}")
    size = cfg.image_size
    n_blobs = int(rng.integers(cfg.min_blobs, cfg.max_blobs + 1))
    lo, hi = 0.25 * size, 0.75 * size
    base = [
        Ellipse(
            cx=float(rng.uniform(lo, hi)),
            cy=float(rng.uniform(lo, hi)),
            ax=float(rng.uniform(0.09 * size, 0.25 * size)),
            ay=float(rng.uniform(0.09 * size, 0.25 * size)),
            angle=float(rng.uniform(0.0, np.pi)),
        )
        for _ in range(n_blobs)
    ]
    vel = [
        (
            float(rng.uniform(-cfg.drift_per_um, cfg.drift_per_um)),
            float(rng.uniform(-cfg.drift_per_um, cfg.drift_per_um)),
            float(rng.uniform(-cfg.drift_per_um / 4, cfg.drift_per_um / 4)),
            float(rng.uniform(-cfg.drift_per_um / 4, cfg.drift_per_um / 4)),
            float(rng.uniform(-0.005, 0.005)),
        )
        for _ in range(n_blobs)
    ]
    gaps = rng.uniform(*cfg.z_gap_range, size=cfg.slices_per_sequence - 1)
    z_positions = np.concatenate([[0.0], np.cumsum(gaps)])

    slices = []
    for z in z_positions:
        blobs = [
            Ellipse(
                cx=b.cx + v[0] * z,
                cy=b.cy + v[1] * z,
                ax=max(2.0, b.ax + v[2] * z),
                ay=max(2.0, b.ay + v[3] * z),
                angle=b.angle + v[4] * z,
            )
            for b, v in zip(base, vel)
        ]
        mask = ellipse_mask(blobs, size)
        jitter = float(rng.normal(0.0, cfg.intensity_jitter))
        clean = np.clip(
            _render_clean(blobs, size, jitter) + rng.normal(0.0, cfg.noise_sigma, (size, size)),
            0.0,
            1.0,
        )
        corrupted = bool(rng.random() < cfg.corrupt_prob)
        if corrupted:
            image = np.clip(clean + rng.normal(0.0, cfg.corrupt_noise_sigma, (size, size)), 0.0, 1.0)
        else:
            image = clean
        slices.append(
            SynthSlice(
                image=image,
                clean_image=clean,
                mask=mask,
                z_position_um=float(z),
                corrupted=corrupted,
                blobs=blobs,
            )
        )
    return f"seq_{index:03d}", slices


def generate_dataset(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Write the full dataset directory; byte-identical per seed."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for s in range(cfg.num_sequences):
        seq_id, slices = generate_sequence(cfg, s)
        seq_dir = root / seq_id
        seq_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for t, sl in enumerate(slices):
            image_name = f"slice_{t}.psr"
            mask_name = f"mask_{t}.psr"
            write_raster(seq_dir / image_name, sl.image[:, :, None].astype(np.float32))
            write_raster(seq_dir / mask_name, sl.mask.astype(np.uint8))
            records.append(
                {
                    "image": image_name,
                    "mask": mask_name,
                    "z_position_um": sl.z_position_um,
                    "corrupted": sl.corrupted,
                }
            )
        meta = {"sequence_id": seq_id, "slices": records}
        (seq_dir / "sequence.json").write_text(json.dumps(meta, indent=2) + "\n")
    return root


# ---------------------------------------------------- distance estimation


def estimate_distance(f_i: np.ndarray, f_j: np.ndarray, scale: float = DISTANCE_SCALE_UM) -> float:
    """Similarity-derived distance: scale * (1 - cos(F_i, F_j)).

    Used only when z metadata is absent. Degenerate embeddings map to the
    maximal-dissimilarity convention, i.e. `scale` itself.
    """
    a = np.asarray(f_i, dtype=np.float64).ravel()
    b = np.asarray(f_j, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        return scale
    sim = float(a @ b) / (na * nb)
    return scale * (1.0 - sim)
