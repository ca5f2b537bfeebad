"""Face-embedding data model, the FVEB binary format, and a synthetic generator.

A face is an identity label, one image-level embedding, and a grid of patch
embeddings. Real pipelines would produce these with a CNN backbone; here a
seeded generator fabricates identities as Gaussian patch prototypes, with
occluded queries whose masked grid rows carry no identity signal.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

DEFAULT_DIM = 512
DEFAULT_GRID = 8

_MAGIC = b"FVEB"
_OCCLUDER_TAG = 2**32  # stream id outside the identity range
_BASE_TAG = 2**32 + 2  # stream id of the shared base-face prototypes

# Identity prototypes sit at `identity_scale` around a shared base face, the
# way real face embeddings cluster tightly around a population mean; this is
# what lets moderate intra-class noise and partial occlusion actually degrade
# whole-image cosine ranking.
DEFAULT_IDENTITY_SCALE = 0.28


class Occlusion(IntEnum):
    NONE = 0
    MASK = 1
    SUNGLASSES = 2


def occluded_rows(occlusion: Occlusion, grid: int = DEFAULT_GRID) -> list[int]:
    """Grid rows replaced by the occluder: bottom 3/8 for masks, rows 2-3
    (scaled) for sunglasses on the 8x8 grid."""
    if occlusion == Occlusion.NONE:
        return []
    if occlusion == Occlusion.MASK:
        n = max(1, round(3 * grid / 8))
        return list(range(grid - n, grid))
    start = round(2 * grid / 8)
    n = max(1, round(2 * grid / 8))
    return list(range(start, start + n))


def occluded_patch_indices(occlusion: Occlusion, grid: int = DEFAULT_GRID) -> np.ndarray:
    rows = occluded_rows(occlusion, grid)
    return np.array([r * grid + c for r in rows for c in range(grid)], dtype=np.int64)


@dataclass
class FaceRecord:
    identity: int
    image_vec: np.ndarray  # (D,)
    patches: np.ndarray    # (grid^2, D), row-major over the grid
    occlusion: Occlusion = Occlusion.NONE

    def __post_init__(self):
        self.image_vec = np.asarray(self.image_vec, dtype=np.float64)
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.identity < 0:
            raise ValueError("identity must be non-negative")
        if self.image_vec.ndim != 1 or self.patches.ndim != 2:
            raise ValueError("image_vec must be 1-D and patches 2-D")
        if self.patches.shape[1] != self.image_vec.shape[0]:
            raise ValueError("patches and image_vec dimension mismatch")
        g = int(round(np.sqrt(self.patches.shape[0])))
        if g * g != self.patches.shape[0]:
            raise ValueError("patch count must be a square grid")
        if not (np.all(np.isfinite(self.image_vec)) and np.all(np.isfinite(self.patches))):
            raise ValueError("non-finite embedding values")

    @property
    def dim(self) -> int:
        return self.image_vec.shape[0]

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def grid(self) -> int:
        return int(round(np.sqrt(self.patches.shape[0])))


@dataclass
class RecordSet:
    records: list[FaceRecord] = field(default_factory=list)

    @property
    def id_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for r in self.records:
            counts[r.identity] = counts.get(r.identity, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> FaceRecord:
        return self.records[i]


class Gallery(RecordSet):
    pass


class QuerySet(RecordSet):
    pass


@dataclass
class SynthConfig:
    n_identities: int
    records_per_identity: int
    intra_class_noise: float
    seed: int
    occluded_fraction: float = 0.0
    queries_per_identity: int = 1
    occlusion_type: Occlusion = Occlusion.MASK
    dim: int = DEFAULT_DIM
    grid: int = DEFAULT_GRID
    identity_scale: float = DEFAULT_IDENTITY_SCALE

    def validate(self) -> None:
        if self.n_identities < 2:
            raise ValueError("need at least 2 identities")
        if self.records_per_identity < 2:
            raise ValueError("need at least 2 records per identity")
        if self.queries_per_identity < 1:
            raise ValueError("need at least 1 query per identity")
        if self.intra_class_noise < 0:
            raise ValueError("intra_class_noise must be non-negative")
        if not (0.0 <= self.occluded_fraction <= 1.0):
            raise ValueError("occluded_fraction must lie in [0, 1]")
        if self.dim < 1 or self.grid < 2:
            raise ValueError("bad embedding dimensions")
        if self.identity_scale <= 0:
            raise ValueError("identity_scale must be positive")


def _round_f32(x: np.ndarray) -> np.ndarray:
    # on-disk precision is f32; rounding here makes save/load the identity
    return x.astype(np.float32).astype(np.float64)


def _make_record(identity: int, patches: np.ndarray, occlusion: Occlusion) -> FaceRecord:
    patches = _round_f32(patches)
    image_vec = _round_f32(patches.mean(axis=0))
    return FaceRecord(identity, image_vec, patches, occlusion)


def generate_synthetic(cfg: SynthConfig) -> tuple[Gallery, QuerySet]:
    """Deterministic synthetic gallery and query set.

    All prototypes share a base-face component; identity k's patch prototypes
    add an offset of magnitude identity_scale drawn from a stream seeded by
    (seed, k). Each record adds Gaussian noise. Occluded queries have the
    designated grid rows replaced verbatim by a shared, identity-independent
    occluder prototype, so those rows carry no identity signal.
    """
    cfg.validate()
    seed = cfg.seed & 0xFFFF_FFFF_FFFF_FFFF
    p2 = cfg.grid * cfg.grid
    sigma = cfg.intra_class_noise
    beta = cfg.identity_scale

    base = np.random.default_rng([seed, _BASE_TAG]).standard_normal((p2, cfg.dim))
    occluder = base + beta * np.random.default_rng([seed, _OCCLUDER_TAG]).standard_normal((p2, cfg.dim))

    gallery = Gallery()
    queries = QuerySet()
    query_noisy: list[np.ndarray] = []
    for k in range(cfg.n_identities):
        rng = np.random.default_rng([seed, k])
        protos = base + beta * rng.standard_normal((p2, cfg.dim))
        for _ in range(cfg.records_per_identity):
            noisy = protos + sigma * rng.standard_normal((p2, cfg.dim))
            gallery.records.append(_make_record(k, noisy, Occlusion.NONE))
        for _ in range(cfg.queries_per_identity):
            query_noisy.append(protos + sigma * rng.standard_normal((p2, cfg.dim)))
            queries.records.append(None)  # placeholder, filled below

    n_q = len(query_noisy)
    n_occ = int(round(cfg.occluded_fraction * n_q))
    perm = np.random.default_rng([seed, _OCCLUDER_TAG + 1]).permutation(n_q)
    occluded_flags = np.zeros(n_q, dtype=bool)
    occluded_flags[perm[:n_occ]] = True
    occ_idx = occluded_patch_indices(cfg.occlusion_type, cfg.grid)

    qi = 0
    for k in range(cfg.n_identities):
        for _ in range(cfg.queries_per_identity):
            patches = query_noisy[qi]
            occ = Occlusion.NONE
            if occluded_flags[qi]:
                occ = cfg.occlusion_type
                patches = patches.copy()
                patches[occ_idx] = occluder[occ_idx]
            queries.records[qi] = _make_record(k, patches, occ)
            qi += 1
    return gallery, queries


# ---------------------------------------------------------------------------
# FVEB binary format
# ---------------------------------------------------------------------------

class GalleryFormatError(Exception):
    pass


class BadMagicError(GalleryFormatError):
    pass


class VersionMismatchError(GalleryFormatError):
    pass


class TruncatedFileError(GalleryFormatError):
    pass


def save_records(rs: RecordSet, path) -> None:
    """FVEB, little-endian. Version 1 is the fixed 512-dim / 64-patch layout;
    version 2 prefixes explicit dimensions for other shapes."""
    if rs.records:
        dim = rs.records[0].dim
        n_patches = rs.records[0].n_patches
        for r in rs.records:
            if r.dim != dim or r.n_patches != n_patches:
                raise ValueError("mixed record shapes in one file")
    else:
        dim, n_patches = DEFAULT_DIM, DEFAULT_GRID * DEFAULT_GRID
    chunks = [_MAGIC]
    if (dim, n_patches) == (DEFAULT_DIM, DEFAULT_GRID * DEFAULT_GRID):
        chunks.append(struct.pack("<HI", 1, len(rs.records)))
    else:
        chunks.append(struct.pack("<HHHI", 2, dim, n_patches, len(rs.records)))
    for r in rs.records:
        chunks.append(struct.pack("<IB", r.identity, int(r.occlusion)))
        chunks.append(r.image_vec.astype("<f4").tobytes())
        chunks.append(r.patches.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def save_gallery(g: Gallery, path) -> None:
    save_records(g, path)


def _load_records(path) -> list[FaceRecord]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != _MAGIC:
        raise BadMagicError(f"{path}: not an FVEB file")
    off = 4

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise TruncatedFileError(f"{path}: truncated at byte {off}")
        chunk = data[off:off + n]
        off += n
        return chunk

    (version,) = struct.unpack("<H", take(2))
    if version == 1:
        dim, n_patches = DEFAULT_DIM, DEFAULT_GRID * DEFAULT_GRID
    elif version == 2:
        dim, n_patches = struct.unpack("<HH", take(4))
    else:
        raise VersionMismatchError(f"{path}: unsupported FVEB version {version}")
    (count,) = struct.unpack("<I", take(4))
    records = []
    for _ in range(count):
        identity, occ = struct.unpack("<IB", take(5))
        image_vec = np.frombuffer(take(4 * dim), dtype="<f4").astype(np.float64)
        patches = np.frombuffer(take(4 * dim * n_patches), dtype="<f4").astype(np.float64)
        records.append(FaceRecord(identity, image_vec, patches.reshape(n_patches, dim), Occlusion(occ)))
    if off != len(data):
        raise TruncatedFileError(f"{path}: {len(data) - off} trailing bytes")
    return records


def load_gallery(path) -> Gallery:
    return Gallery(records=_load_records(path))


def load_queries(path) -> QuerySet:
    return QuerySet(records=_load_records(path))


def export_text(rs: RecordSet, path) -> None:
    """Line-delimited debug dump: identity, occlusion, image_vec, patches."""
    with open(path, "w") as fh:
        for r in rs.records:
            vals = np.concatenate([r.image_vec, r.patches.ravel()])
            fh.write(f"{r.identity} {r.occlusion.name} ")
            fh.write(" ".join(repr(float(v)) for v in vals))
            fh.write("\n")


def records_equal(a: RecordSet, b: RecordSet) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a.records, b.records):
        if ra.identity != rb.identity or ra.occlusion != rb.occlusion:
            return False
        if not (np.array_equal(ra.image_vec, rb.image_vec) and np.array_equal(ra.patches, rb.patches)):
            return False
    return True
