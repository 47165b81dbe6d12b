"""Chunk files, dataset manifests and the synthetic pulsatile-video generator.

MARC chunk layout (little-endian)::

    b"MARC" | u32 version | u32 T | u32 H | u32 W | u32 C | f32 fs
    | T*H*W*C f32 frames (row-major) | T f32 ppg | u32 crc32

The CRC covers every byte before it, so payload corruption is reported
instead of being read back as plausible pixels.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import make_rng
from .numerics.rng import SYNTH_STREAM

MAGIC = b"MARC"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIf")
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


class ChunkFormatError(ValueError):
    """Malformed chunk file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int, path=None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte {offset})")


class ManifestError(ValueError):
    pass


@dataclass
class VideoChunk:
    frames: np.ndarray  # (T, H, W, C) float32 in [0, 1]
    ppg: np.ndarray  # (T,) float32
    fs: float = 30.0
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        self.ppg = np.ascontiguousarray(self.ppg, dtype=np.float32)
        self.fs = float(np.float32(self.fs))
        if self.frames.ndim != 4 or self.ppg.shape != (self.frames.shape[0],):
            raise ValueError(f"frames {self.frames.shape} and ppg {self.ppg.shape} disagree on T")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if not (np.all(np.isfinite(self.frames)) and np.all(np.isfinite(self.ppg))):
            raise ValueError("chunk contains non-finite values")
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() > 1):
            raise ValueError("frame values must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(self.frames.shape)

    def windows(self, length: int) -> list["VideoChunk"]:
        """Split into consecutive non-overlapping chunks of ``length`` frames."""
        n = self.frames.shape[0] // length
        return [VideoChunk(self.frames[i * length:(i + 1) * length],
                           self.ppg[i * length:(i + 1) * length], self.fs,
                           f"{self.source_id}#{i}") for i in range(n)]


def encode_chunk(chunk: VideoChunk) -> bytes:
    t, h, w, c = chunk.frames.shape
    body = b"".join([
        _HEADER.pack(MAGIC, VERSION, t, h, w, c, chunk.fs),
        chunk.frames.astype("<f4").tobytes(),
        chunk.ppg.astype("<f4").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def decode_chunk(buf: bytes, source_id: str = "", path=None) -> VideoChunk:
    if len(buf) < 4:
        raise ChunkFormatError("truncated magic", len(buf), path)
    if buf[:4] != MAGIC:
        raise ChunkFormatError("not a MARC file", 0, path)
    if len(buf) < _HEADER.size:
        raise ChunkFormatError("truncated header", len(buf), path)
    _, version, t, h, w, c, fs = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise ChunkFormatError(f"unsupported version {version}", 4, path)
    n_pix = t * h * w * c
    expected = _HEADER.size + 4 * n_pix + 4 * t + 4
    if len(buf) < expected:
        raise ChunkFormatError(f"truncated payload: {len(buf)} of {expected} bytes", len(buf), path)
    if len(buf) > expected:
        raise ChunkFormatError(f"{len(buf) - expected} trailing bytes", expected, path)
    (stored,) = struct.unpack_from("<I", buf, expected - 4)
    if zlib.crc32(buf[:expected - 4]) != stored:
        raise ChunkFormatError("checksum mismatch", expected - 4, path)
    if not (np.isfinite(fs) and fs > 0):
        raise ChunkFormatError(f"invalid sampling rate {fs}", 20, path)
    frames = np.frombuffer(buf, dtype="<f4", count=n_pix, offset=_HEADER.size).reshape(t, h, w, c)
    ppg = np.frombuffer(buf, dtype="<f4", count=t, offset=_HEADER.size + 4 * n_pix)
    try:
        return VideoChunk(frames.astype(np.float32), ppg.astype(np.float32), fs, source_id)
    except ValueError as exc:
        raise ChunkFormatError(str(exc), _HEADER.size, path) from None


def write_chunk(path, chunk: VideoChunk) -> None:
    Path(path).write_bytes(encode_chunk(chunk))


def read_chunk(path) -> VideoChunk:
    path = Path(path)
    return decode_chunk(path.read_bytes(), source_id=path.stem, path=path)


# -- manifest --------------------------------------------------------------

@dataclass
class DatasetManifest:
    fs: float
    dims: tuple[int, int, int, int]  # chunk T, H, W, C
    entries: list[tuple[str, Path]] = field(default_factory=list)
    version: int = MANIFEST_VERSION
    path: Path | None = None

    def split(self, name: str) -> list[Path]:
        return [p for s, p in self.entries if s == name]


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    lines = [f"version={manifest.version}", f"fs={_fmt_num(manifest.fs)}",
             "dims=" + "x".join(str(d) for d in manifest.dims)]
    base = path.parent.absolute()
    for split, p in manifest.entries:
        # entries are resolved against the manifest's directory on load
        p = Path(p).absolute()
        rel = p.relative_to(base) if p.is_relative_to(base) else p
        lines.append(f"{split}\t{rel.as_posix()}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_manifest(path: Path) -> DatasetManifest:
    header: dict[str, str] = {}
    entries: list[tuple[str, Path]] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" in line:
            split, rel = line.split("\t", 1)
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            entries.append((split, path.parent / rel))
        elif "=" in line:
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
        else:
            raise ManifestError(f"{path}:{lineno}: unparseable line {raw!r}")
    missing = {"version", "fs", "dims"} - set(header)
    if missing:
        raise ManifestError(f"{path}: missing header fields {sorted(missing)}")
    try:
        version = int(header["version"])
        fs = float(header["fs"])
        dims = tuple(int(d) for d in header["dims"].split("x"))
    except ValueError as exc:
        raise ManifestError(f"{path}: bad header value ({exc})") from None
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {version}")
    if len(dims) != 4:
        raise ManifestError(f"{path}: dims must be TxHxWxC, got {header['dims']}")
    return DatasetManifest(fs=fs, dims=dims, entries=entries, version=version, path=path)


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest; every listed chunk must exist, parse,
    and match the declared fs and frame geometry.  A file may hold any
    positive multiple of the declared chunk length (a longer recording)."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    manifest = _parse_manifest(path)
    t, h, w, c = manifest.dims
    missing = [str(p) for _, p in manifest.entries if not p.is_file()]
    if missing:
        raise ManifestError("missing chunk files: " + ", ".join(missing))
    bad_fs, bad_dims = [], []
    for _, p in manifest.entries:
        try:
            chunk = read_chunk(p)
        except ChunkFormatError as exc:
            raise ManifestError(f"unreadable chunk {p}: {exc}") from None
        if not np.isclose(chunk.fs, manifest.fs):
            bad_fs.append(str(p))
        ct, ch, cw, cc = chunk.dims
        if (ch, cw, cc) != (h, w, c) or ct % t or ct == 0:
            bad_dims.append(str(p))
    if bad_fs:
        raise ManifestError("inconsistent sampling rate: " + ", ".join(bad_fs))
    if bad_dims:
        raise ManifestError("inconsistent dims: " + ", ".join(bad_dims))
    return manifest


# -- synthetic video ---------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    frames: int = 60
    eval_frames: int = 300
    height: int = 64
    width: int = 64
    fs: float = 30.0
    hr_min: float = 48.0
    hr_max: float = 144.0
    harmonic: float = 0.35
    pulse_amplitude: float = 0.02
    noise_sigma: float = 0.02
    drift_amplitude: float = 0.05
    motion_min: float = 0.0
    motion_max: float = 4.0
    ellipse_ry: float = 0.38
    ellipse_rx: float = 0.28
    seed: int = 0

    def __post_init__(self):
        if not 45.0 <= self.hr_min <= self.hr_max <= 150.0:
            raise ValueError("HR range must lie inside the 45-150 BPM band")
        if self.noise_sigma < 0 or self.drift_amplitude < 0 or self.motion_min < 0 \
                or self.motion_max < self.motion_min:
            raise ValueError("noise, drift and motion amplitudes must be non-negative")


SKIN_RGB = np.array([0.70, 0.55, 0.45])
PULSE_RGB = np.array([0.25, 1.0, 0.25])
BACKGROUND = 0.3


def pulse_wave(t: np.ndarray, hr_bpm: float, harmonic: float, phase: float = 0.0) -> np.ndarray:
    w = 2 * np.pi * hr_bpm / 60.0
    return np.sin(w * t + phase) + harmonic * np.sin(2 * (w * t + phase))


def ellipse_masks(cfg: SynthConfig, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Boolean skin masks (T, H, W) for an ellipse translated by (dy, dx) px."""
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    cy = (cfg.height - 1) / 2 + dy[:, None, None]
    cx = (cfg.width - 1) / 2 + dx[:, None, None]
    ry, rx = cfg.ellipse_ry * cfg.height, cfg.ellipse_rx * cfg.width
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def synth_clip(cfg: SynthConfig, rng: np.random.Generator, hr_bpm: float | None = None,
               n_frames: int | None = None, source_id: str = "synth") -> VideoChunk:
    """Render a clip of a pulsating skin ellipse on a gray background.

    Draw order from ``rng``: hr (when not given), pulse phase, drift
    frequency and phase, motion amplitude, two motion frequencies and
    phases, then the pixel noise field.
    """
    n = cfg.frames if n_frames is None else n_frames
    if hr_bpm is None:
        hr_bpm = rng.uniform(cfg.hr_min, cfg.hr_max)
    t = np.arange(n) / cfg.fs
    phase = rng.uniform(0, 2 * np.pi)
    drift_f = rng.uniform(0.01, 0.09)
    drift_phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(cfg.motion_min, cfg.motion_max)
    mf = rng.uniform(0.05, 0.3, size=2)
    mphase = rng.uniform(0, 2 * np.pi, size=2)

    p = pulse_wave(t, hr_bpm, cfg.harmonic, phase)
    dy = amp * np.sin(2 * np.pi * mf[0] * t + mphase[0])
    dx = amp * np.sin(2 * np.pi * mf[1] * t + mphase[1])
    masks = ellipse_masks(cfg, dy, dx)[..., None]  # T H W 1

    skin = SKIN_RGB[None, :] + cfg.pulse_amplitude * p[:, None] * PULSE_RGB[None, :]  # T x 3
    frames = np.where(masks, skin[:, None, None, :], BACKGROUND)
    illum = 1.0 + cfg.drift_amplitude * np.sin(2 * np.pi * drift_f * t + drift_phase)
    frames = frames * illum[:, None, None, None]
    if cfg.noise_sigma > 0:
        frames = frames + rng.normal(0.0, cfg.noise_sigma, size=frames.shape)
    frames = np.clip(frames, 0.0, 1.0)
    label = (p - p.mean()) / p.std()
    return VideoChunk(frames, label, cfg.fs, source_id)


def stratified_hrs(cfg: SynthConfig, n_train: int, n_val: int, n_test: int) -> dict[str, list[float]]:
    """One HR stratum per clip; val/test strata evenly spaced across the range.

    Each clip draws its HR uniformly inside its own stratum (from its own
    stream), so HRs are distinct and test/val never share a stratum with train.
    """
    total = n_train + n_val + n_test
    edges = np.linspace(cfg.hr_min, cfg.hr_max, total + 1)
    held = n_val + n_test
    held_idx = _spread(held, total)
    test_idx = [held_idx[i] for i in _spread(n_test, held)]
    val_idx = [i for i in held_idx if i not in test_idx]
    train_idx = [i for i in range(total) if i not in held_idx]
    return {split: [(edges[i], edges[i + 1]) for i in idx]
            for split, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx))}


def _spread(k: int, n: int) -> list[int]:
    """k distinct indices evenly spaced over range(n)."""
    if k == 0:
        return []
    return [int(i) for i in np.round((np.arange(k) + 0.5) * n / k - 0.5)]


def synth_dataset(cfg: SynthConfig, n_train: int, n_val: int, n_test: int, out_dir) -> DatasetManifest:
    """Write train/val/test clips plus ``manifest.txt`` into ``out_dir``.

    Train clips hold ``cfg.frames`` frames (one chunk); val/test clips hold
    ``cfg.eval_frames`` frames (consecutive chunks of one recording).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.eval_frames % cfg.frames:
        raise ValueError("eval_frames must be a multiple of frames")
    strata = stratified_hrs(cfg, n_train, n_val, n_test)
    entries: list[tuple[str, Path]] = []
    clip_index = 0
    for split in SPLITS:
        n_frames = cfg.frames if split == "train" else cfg.eval_frames
        for k, (lo, hi) in enumerate(strata[split]):
            rng = make_rng(cfg.seed, SYNTH_STREAM, clip_index)
            hr = rng.uniform(lo, hi)
            name = f"{split}_{k:03d}"
            chunk = synth_clip(cfg, rng, hr_bpm=hr, n_frames=n_frames, source_id=name)
            path = out_dir / f"{name}.marc"
            write_chunk(path, chunk)
            entries.append((split, path))
            clip_index += 1
    manifest = DatasetManifest(fs=cfg.fs, dims=(cfg.frames, cfg.height, cfg.width, 3),
                               entries=entries, path=out_dir / "manifest.txt")
    write_manifest(manifest.path, manifest)
    return manifest
