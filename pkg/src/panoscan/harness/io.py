"""File formats: scanpath CSV, binary PNM frames, key=value configs and dataset manifests."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..geometry import ErpFrame
from ..metrics import Scanpath

CSV_HEADER = ["video_id", "user_id", "t_index", "phi_rad", "theta_rad"]


class FormatError(ValueError):
    pass


# -- scanpaths -----------------------------------------------------------------

def load_scanpaths(path, degrees: bool = False, rate: float = 5.0) -> list[Scanpath]:
    """Read a scanpath CSV into one Scanpath per (video, user), in file order of first appearance."""
    groups: dict[tuple[str, str], list[tuple[int, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise FormatError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            video, user = row[0].strip(), row[1].strip()
            try:
                t = int(row[2])
                phi, theta = float(row[3]), float(row[4])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if degrees:
                phi, theta = math.radians(phi), math.radians(theta)
            if not (math.isfinite(phi) and math.isfinite(theta)):
                raise FormatError(f"{path}:{lineno}: non-finite angle")
            if abs(phi) > math.pi / 2:
                raise FormatError(f"{path}:{lineno}: latitude {phi} outside [-pi/2, pi/2]")
            rows = groups.setdefault((video, user), [])
            if rows and t <= rows[-1][0]:
                raise FormatError(f"{path}:{lineno}: t_index {t} does not increase for {video}/{user}")
            if rows and t != rows[-1][0] + 1:
                raise FormatError(f"{path}:{lineno}: t_index jumps from {rows[-1][0]} to {t} for {video}/{user}")
            rows.append((t, phi, theta))
    return [Scanpath(v, u, [(p, th) for _, p, th in rows], rows[0][0], rate)
            for (v, u), rows in groups.items()]


def save_scanpaths(path, scanpaths: Iterable[Scanpath], degrees: bool = False) -> None:
    conv = math.degrees if degrees else float
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in scanpaths:
            for k, (phi, theta) in enumerate(s.points):
                w.writerow([s.video_id, s.user_id, s.start + k,
                            format(conv(phi), ".17g"), format(conv(theta), ".17g")])


# -- PNM frames ----------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pnm(path) -> ErpFrame:
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM magic {magic!r}; need P5 or P6")
    pos = 2
    vals = []
    for _ in range(3):
        m = _TOKEN.match(buf, pos)
        if not m:
            raise FormatError(f"{path}: truncated header")
        vals.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = vals
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit samples are supported (maxval {maxval})")
    pos += 1  # single whitespace byte before the raster
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos) if len(buf) - pos >= n else None
    if data is None:
        raise FormatError(f"{path}: expected {n} samples")
    return ErpFrame(data.reshape(height, width, channels))


def write_pnm(path, raster: np.ndarray) -> None:
    arr = np.asarray(raster)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    magic = b"P5" if arr.ndim == 2 else b"P6"
    header = magic + f"\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + arr.tobytes())


def load_frames(directory) -> list[ErpFrame]:
    """Frames named by zero-padded index (``000000.pgm`` ...), ordered by index."""
    directory = Path(directory)
    indexed = {}
    for p in directory.iterdir():
        if p.suffix.lower() in (".pgm", ".ppm", ".pnm") and p.stem.isdigit():
            indexed[int(p.stem)] = p
    if not indexed:
        raise FormatError(f"{directory}: no numbered .pgm/.ppm frames")
    keys = sorted(indexed)
    for a, b in zip(keys, keys[1:]):
        if b != a + 1:
            raise FormatError(f"{directory}: frame sequence has a gap between {a} and {b}")
    frames = [read_pnm(indexed[k]) for k in keys]
    shape = frames[0].data.shape
    for k, f in zip(keys, frames):
        if f.data.shape != shape:
            raise FormatError(f"{indexed[k]}: size {f.data.shape} differs from {shape}")
    return frames


# -- key = value configuration ------------------------------------------------------

def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise FormatError(f"{source}:{lineno}: empty key")
        out[k] = v
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(), str(path))


# -- manifests ---------------------------------------------------------------------

MANIFEST_HEADER = ["video_id", "frames", "frame_rate", "scanpaths", "sample_rate", "split"]


@dataclass
class ManifestEntry:
    video_id: str
    frames: Path | None
    frame_rate: float
    scanpaths: Path
    sample_rate: float
    split: str = "train"

    def frame_index(self, t_index: int) -> int:
        return int(round(t_index * self.frame_rate / self.sample_rate))


def load_manifest(path) -> list[ManifestEntry]:
    """CSV manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:5] != MANIFEST_HEADER[:5]:
            raise FormatError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            row = [c.strip() for c in row] + ["train"] * (6 - len(row))
            video, frames, frate, spath, srate, split = row[:6]
            try:
                frate_f, srate_f = float(frate), float(srate)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: rates must be numbers") from None
            if srate_f <= 0 or frate_f <= 0:
                raise FormatError(f"{path}:{lineno}: rates must be positive")
            fdir = None if frames.lower() == "none" else base / frames
            if fdir is not None and not fdir.is_dir():
                raise FormatError(f"{path}:{lineno}: frame directory {fdir} not found")
            sp = base / spath
            if not sp.is_file():
                raise FormatError(f"{path}:{lineno}: scanpath file {sp} not found")
            entries.append(ManifestEntry(video, fdir, frate_f, sp, srate_f, split or "train"))
    if not entries:
        raise FormatError(f"{path}: manifest lists no videos")
    return entries
