"""Synthetic multitemporal scenes, DFR1 rasters, PPM/PGM output and dataset iteration.

All randomness comes from :class:`SplitMix64` so generated datasets are
reproducible bit-for-bit from a seed, independent of numpy's generators.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .tensor import interp_matrix

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MUL1 = 0xBF58476D1CE4E5B9
MUL2 = 0x94D049BB133111EB


class GenerationError(RuntimeError):
    pass


class FormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MUL1) & MASK64
    z = ((z ^ (z >> 27)) * MUL2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """splitmix64: state += 0x9E3779B97F4A7C15, output = mix(state)."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def next_float(self) -> float:
        """Uniform in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        return lo + int(self.next_float() * (hi - lo + 1))

    def floats(self, n: int) -> np.ndarray:
        """``n`` consecutive next_float() draws, vectorised."""
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MUL1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MUL2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]
        return items


def stream(seed: int, index: int) -> SplitMix64:
    """Independent generator for item ``index`` under ``seed``: state = seed XOR mix(index + 1)."""
    return SplitMix64((seed & MASK64) ^ mix64((index + 1) & MASK64))


# ---------------------------------------------------------------- scenes


@dataclass
class SynthConfig:
    image_size: int = 64
    buildings_min: int = 2
    buildings_max: int = 6
    size_min: int = 8
    size_max: int = 20
    damage_probs: tuple[float, ...] = (0.4, 0.2, 0.2, 0.2)
    noise: float = 0.05
    brightness_shift: float = -0.2
    speckle: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.image_size <= 0 or self.image_size % 32:
            raise ValueError(f"image_size {self.image_size} must be a positive multiple of 32")
        if not 0 <= self.buildings_min <= self.buildings_max:
            raise ValueError("building count range is invalid")
        if not 1 <= self.size_min <= self.size_max <= self.image_size:
            raise ValueError("building size range must lie within the image")
        if len(self.damage_probs) != 4 or min(self.damage_probs) < 0 or abs(sum(self.damage_probs) - 1) > 1e-9:
            raise ValueError(f"damage_probs must be 4 non-negative values summing to 1, got {self.damage_probs}")


@dataclass
class Building:
    top: int
    left: int
    height: int
    width: int
    level: int


@dataclass
class SamplePair:
    pre: np.ndarray  # 3xHxW float32 in [0, 1]
    post: np.ndarray
    loc: np.ndarray  # HxW uint8 in {0, 1}
    dam: np.ndarray  # HxW uint8 in {0..4}
    buildings: list[Building] = field(default_factory=list)

    @property
    def size(self) -> tuple[int, int]:
        return self.loc.shape


def _texture(rng: SplitMix64, size: int, noise: float) -> np.ndarray:
    base = rng.floats(3) * 0.3 + 0.2
    coarse = rng.floats(3 * 8 * 8).reshape(3, 8, 8) - 0.5
    up = interp_matrix(8, size)
    smooth = np.einsum("ih,chw,jw->cij", up, coarse, up) * 0.2
    fine = (rng.floats(3 * size * size).reshape(3, size, size) - 0.5) * 2 * noise
    return base[:, None, None] + smooth + fine


def _overlaps(b: Building, placed: Sequence[Building], gap: int = 1) -> bool:
    for o in placed:
        if (
            b.top < o.top + o.height + gap
            and o.top < b.top + b.height + gap
            and b.left < o.left + o.width + gap
            and o.left < b.left + b.width + gap
        ):
            return True
    return False


def synth_scene(cfg: SynthConfig, index: int, max_retries: int = 200) -> SamplePair:
    """Deterministic pre/post pair with rectangular buildings and graded damage."""
    cfg.validate()
    rng = stream(cfg.seed, index)
    s = cfg.image_size
    background = _texture(rng, s, cfg.noise)
    pre = background.copy()
    post = background.copy()
    loc = np.zeros((s, s), dtype=np.uint8)
    dam = np.zeros((s, s), dtype=np.uint8)
    cum = np.cumsum(cfg.damage_probs)

    placed: list[Building] = []
    for _ in range(rng.randint(cfg.buildings_min, cfg.buildings_max)):
        for _attempt in range(max_retries):
            h = rng.randint(cfg.size_min, cfg.size_max)
            w = rng.randint(cfg.size_min, cfg.size_max)
            cand = Building(rng.randint(0, s - h), rng.randint(0, s - w), h, w, 0)
            if not _overlaps(cand, placed):
                break
        else:
            raise GenerationError(f"scene {index}: could not place building {len(placed) + 1} after {max_retries} tries")
        u = rng.next_float()
        cand.level = int(min(np.searchsorted(cum, u, side="right"), 3)) + 1
        placed.append(cand)

        roof = rng.floats(3) * 0.3 + 0.65
        grain = (rng.floats(3 * h * w).reshape(3, h, w) - 0.5) * 2 * cfg.noise
        region = (slice(None), slice(cand.top, cand.top + h), slice(cand.left, cand.left + w))
        painted = roof[:, None, None] + grain
        pre[region] = painted
        if cand.level == 1:
            post[region] = painted
        elif cand.level == 2:
            post[region] = painted + cfg.brightness_shift
        elif cand.level == 3:
            speck = (rng.floats(3 * h * w).reshape(3, h, w) - 0.5) * 2 * cfg.speckle
            post[region] = painted + cfg.brightness_shift + speck
        # level 4: the roof is gone, background texture stays in post
        loc[region[1:]] = 1
        dam[region[1:]] = cand.level

    return SamplePair(
        pre=np.clip(pre, 0.0, 1.0).astype(np.float32),
        post=np.clip(post, 0.0, 1.0).astype(np.float32),
        loc=loc,
        dam=dam,
        buildings=placed,
    )


# ---------------------------------------------------------------- DFR1 rasters

_DFR_MAGIC = b"DFR1"
_DFR_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_MAX_DIMS = 8


def encode_raster(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        code = 0
    elif arr.dtype == np.uint8:
        code = 1
    else:
        raise ValueError(f"DFR1 stores float32 or uint8, got {arr.dtype}")
    if arr.ndim == 0 or 0 in arr.shape:
        raise ValueError(f"DFR1 needs a non-empty shape, got {arr.shape}")
    head = _DFR_MAGIC + struct.pack("<BI", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DFR_DTYPES[code]).tobytes()


def decode_raster(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != _DFR_MAGIC:
        raise FormatError("bad DFR1 magic", 0)
    if len(buf) < 9:
        raise FormatError("truncated DFR1 header", len(buf))
    code, ndim = struct.unpack_from("<BI", buf, 4)
    if code not in _DFR_DTYPES:
        raise FormatError(f"unknown dtype code {code}", 4)
    if ndim == 0 or ndim > _MAX_DIMS:
        raise FormatError(f"dimension count {ndim} out of range", 5)
    off = 9
    if len(buf) < off + 4 * ndim:
        raise FormatError("truncated DFR1 dims", len(buf))
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    if 0 in dims:
        raise FormatError(f"zero-length dimension in {dims}", off)
    off += 4 * ndim
    dt = _DFR_DTYPES[code]
    count = int(np.prod(dims, dtype=object))
    need = count * dt.itemsize
    if need > 1 << 40:
        raise FormatError(f"dims {dims} overflow the payload size limit", 9)
    if len(buf) - off != need:
        raise FormatError(f"payload has {len(buf) - off} bytes, expected {need}", off)
    out = np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(dims)
    return out.astype(np.float32) if code == 0 else out.copy()


def write_raster(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_raster(arr))


def read_raster(path) -> np.ndarray:
    return decode_raster(Path(path).read_bytes())


# ---------------------------------------------------------------- PPM / PGM

# damage colour map: background black, no damage white, minor green, major yellow, destroyed red
PALETTE = np.array(
    [[0, 0, 0], [255, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]],
    dtype=np.uint8,
)


def render_damage_palette(dam: np.ndarray) -> np.ndarray:
    dam = np.asarray(dam)
    if dam.size and (dam.min() < 0 or dam.max() > 4):
        raise ValueError("damage mask entries must lie in 0..4")
    return PALETTE[dam.astype(np.int64)]


def palette_to_mask(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.uint8)
    out = np.full(rgb.shape[:2], -1, dtype=np.int64)
    for cls, colour in enumerate(PALETTE):
        out[np.all(rgb == colour, axis=-1)] = cls
    if (out < 0).any():
        raise ValueError("image contains colours outside the damage palette")
    return out.astype(np.uint8)


def encode_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def decode_pnm(buf: bytes) -> np.ndarray:
    """Minimal reader for the P5/P6 files written above (no comments)."""
    parts = buf.split(maxsplit=4)
    magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM header {magic!r}/{maxval}", 0)
    channels = 3 if magic == b"P6" else 1
    payload = buf[len(buf) - w * h * channels :]
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def write_ppm(path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


def write_pgm(path, gray: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(gray))


# ---------------------------------------------------------------- datasets


class SyntheticDataset:
    """Scenes ``offset .. offset+count-1`` of the generator, produced on demand."""

    def __init__(self, cfg: SynthConfig, count: int, offset: int = 0):
        cfg.validate()
        self.cfg, self.count, self.offset = cfg, count, offset
        self._cache: dict[int, SamplePair] = {}

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> SamplePair:
        if not 0 <= i < self.count:
            raise IndexError(i)
        if i not in self._cache:
            self._cache[i] = synth_scene(self.cfg, self.offset + i)
        return self._cache[i]


class DirectoryDataset:
    """Reads ``<root>/<id>.{pre,post,loc,dam}.dfr`` quadruplets, ids sorted."""

    SUFFIXES = ("pre", "post", "loc", "dam")

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"dataset directory {self.root} does not exist")
        ids = sorted(p.name[: -len(".pre.dfr")] for p in self.root.glob("*.pre.dfr"))
        for i in ids:
            for suf in self.SUFFIXES:
                if not (self.root / f"{i}.{suf}.dfr").exists():
                    raise FileNotFoundError(f"{self.root}/{i}.{suf}.dfr missing")
        if not ids:
            raise FileNotFoundError(f"no *.pre.dfr files in {self.root}")
        self.ids = ids

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> SamplePair:
        stem = self.root / self.ids[i]
        pre, post, loc, dam = (read_raster(f"{stem}.{s}.dfr") for s in self.SUFFIXES)
        if pre.shape != post.shape or pre.ndim != 3 or loc.shape != pre.shape[1:] or dam.shape != loc.shape:
            raise FormatError(f"sample {self.ids[i]} has inconsistent shapes", 0)
        return SamplePair(pre=pre, post=post, loc=loc, dam=dam)


def write_split(root, samples: Sequence[SamplePair], start: int = 0) -> list[str]:
    root = Path(root)
    os.makedirs(root, exist_ok=True)
    ids = []
    for k, s in enumerate(samples):
        sid = f"{start + k:05d}"
        write_raster(root / f"{sid}.pre.dfr", s.pre)
        write_raster(root / f"{sid}.post.dfr", s.post)
        write_raster(root / f"{sid}.loc.dfr", s.loc.astype(np.uint8))
        write_raster(root / f"{sid}.dam.dfr", s.dam.astype(np.uint8))
        ids.append(sid)
    return ids


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    return stream(seed, epoch).permutation(n)


def collate(samples: Sequence[SamplePair]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.stack([s.pre for s in samples]),
        np.stack([s.post for s in samples]),
        np.stack([s.loc for s in samples]).astype(np.int64),
        np.stack([s.dam for s in samples]).astype(np.int64),
    )


def batches(dataset, batch_size: int, seed: int) -> Iterator[list[SamplePair]]:
    """Endless stream of batches; each epoch is a seeded reshuffle, remainders carry over."""
    epoch = 0
    pending: list[int] = []
    while True:
        pending += epoch_order(len(dataset), seed, epoch)
        epoch += 1
        while len(pending) >= batch_size:
            idx, pending = pending[:batch_size], pending[batch_size:]
            yield [dataset[i] for i in idx]
