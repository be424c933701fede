"""Frame supply for the pipeline: Y4M decoding, keyframe sidecars, resampling.

The library itself never touches compressed codecs. Sources are expected as
YUV4MPEG2 streams (produced by an external transcoder); compressed-stream
keyframe timestamps arrive through a ``<video>.kf.txt`` sidecar with one
ascending float (seconds) per line.

YCbCr -> RGB uses BT.601 full-range coefficients:

    R = Y + 1.402 * (Cr - 128)
    G = Y - 0.344136 * (Cb - 128) - 0.714136 * (Cr - 128)
    B = Y + 1.772 * (Cb - 128)

computed in float64, rounded half away from zero (floor(x + 0.5)) and
clamped to [0, 255]. 4:2:0 chroma is upsampled by sample replication
(each chroma sample covers its 2x2 luma block), so decoding is bit-exact
and reproducible across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, Protocol

import numpy as np

KEYFRAME_SIDECAR_SUFFIX = ".kf.txt"


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    index: int
    t_s: float
    pixels: np.ndarray  # H x W x 3 uint8 RGB


class FrameSource(Protocol):
    """Single-consumer stream of decoded frames.

    Implementations yield frames in strictly increasing index order;
    ``seek(t_s)`` positions the stream on the first frame with t_s >= target.
    """

    fps: float
    width: int
    height: int
    frame_count: int

    def __iter__(self) -> Iterator[Frame]: ...

    def next(self) -> Frame | None: ...

    def seek(self, t_s: float) -> None: ...


_SUPPORTED_420 = {"420", "420jpeg", "420mpeg2", "420paldv"}


def _parse_y4m_header(line: bytes, path: Path) -> tuple[int, int, float, str]:
    parts = line.decode("ascii", errors="replace").split()
    if not parts or parts[0] != "YUV4MPEG2":
        raise IngestError(f"{path}: bad magic, not a YUV4MPEG2 stream")
    width = height = 0
    fps = 0.0
    chroma = "420jpeg"
    for tag in parts[1:]:
        key, val = tag[0], tag[1:]
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "F":
            num, den = val.split(":")
            fps = int(num) / int(den)
        elif key == "C":
            chroma = val
    if width <= 0 or height <= 0 or fps <= 0:
        raise IngestError(f"{path}: incomplete Y4M header")
    if chroma not in _SUPPORTED_420 and chroma != "444":
        raise IngestError(f"{path}: unsupported chroma subsampling C{chroma}")
    return width, height, fps, chroma


def _ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    yf = y.astype(np.float64)
    cbf = cb.astype(np.float64) - 128.0
    crf = cr.astype(np.float64) - 128.0
    r = yf + 1.402 * crf
    g = yf - 0.344136 * cbf - 0.714136 * crf
    b = yf + 1.772 * cbf
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.floor(rgb + 0.5), 0.0, 255.0).astype(np.uint8)


class Y4MSource:
    """FrameSource over a YUV4MPEG2 file (C420* or C444)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh: BinaryIO = self.path.open("rb")
        header = self._fh.readline()
        self.width, self.height, self.fps, self._chroma = _parse_y4m_header(header, self.path)
        if self._chroma == "444":
            self._chroma_shape = (self.height, self.width)
        else:
            if self.width % 2 or self.height % 2:
                raise IngestError(f"{self.path}: odd dimensions with 4:2:0 chroma")
            self._chroma_shape = (self.height // 2, self.width // 2)
        self._frame_bytes = self.width * self.height + 2 * (
            self._chroma_shape[0] * self._chroma_shape[1]
        )
        self._data_start = self._fh.tell()
        self._next_index = 0
        # Byte offset of every frame seen so far; grows as the stream is read.
        self._offsets: list[int] = [self._data_start]
        self._frame_count: int | None = None

    @property
    def frame_count(self) -> int:
        if self._frame_count is None:
            while self._read_at(len(self._offsets) - 1, peek=True) is not None:
                pass
        return self._frame_count

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps

    def _read_at(self, index: int, peek: bool = False) -> Frame | None:
        """Read frame ``index``; offsets for all earlier frames must be known."""
        self._fh.seek(self._offsets[index])
        marker = self._fh.readline()
        if not marker:
            self._frame_count = index
            return None
        if not marker.startswith(b"FRAME"):
            raise IngestError(f"{self.path}: missing FRAME marker at frame {index}")
        raw = self._fh.read(self._frame_bytes)
        if len(raw) < self._frame_bytes:
            self._frame_count = index
            if peek:
                return None
            raise IngestError(f"{self.path}: truncated stream inside frame {index}")
        if index + 1 == len(self._offsets):
            self._offsets.append(self._fh.tell())
        if peek:
            return Frame(index=index, t_s=index / self.fps, pixels=np.empty(0, np.uint8))
        ysize = self.width * self.height
        csize = self._chroma_shape[0] * self._chroma_shape[1]
        y = np.frombuffer(raw, np.uint8, ysize).reshape(self.height, self.width)
        cb = np.frombuffer(raw, np.uint8, csize, offset=ysize).reshape(self._chroma_shape)
        cr = np.frombuffer(raw, np.uint8, csize, offset=ysize + csize).reshape(self._chroma_shape)
        if self._chroma != "444":
            cb = cb.repeat(2, axis=0).repeat(2, axis=1)
            cr = cr.repeat(2, axis=0).repeat(2, axis=1)
        return Frame(index=index, t_s=index / self.fps, pixels=_ycbcr_to_rgb(y, cb, cr))

    def next(self) -> Frame | None:
        if self._frame_count is not None and self._next_index >= self._frame_count:
            return None
        while self._next_index >= len(self._offsets):
            if self._read_at(len(self._offsets) - 1, peek=True) is None:
                return None
        frame = self._read_at(self._next_index)
        if frame is None:
            return None
        self._next_index += 1
        return frame

    def __iter__(self) -> Iterator[Frame]:
        while True:
            frame = self.next()
            if frame is None:
                return
            yield frame

    def seek(self, t_s: float) -> None:
        # First frame with t_s >= target; 1e-9 guards float noise in k/fps.
        self._next_index = max(0, math.ceil(t_s * self.fps - 1e-9))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "Y4MSource":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_y4m(path: str | Path) -> Y4MSource:
    return Y4MSource(path)


def load_keyframe_index(path: str | Path) -> list[float]:
    """Read a keyframe sidecar: one ascending timestamp (s) per line.

    0.0 is prepended when the file does not start at zero, since the first
    frame of any stream is decodable.
    """
    path = Path(path)
    times: list[float] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                t = float(line)
            except ValueError:
                raise IngestError(f"{path}: line {line_no}: not a number: {line!r}") from None
            if times and t <= times[-1]:
                raise IngestError(f"{path}: line {line_no}: timestamps must be ascending")
            times.append(t)
    if not times or times[0] != 0.0:
        if times and times[0] < 0.0:
            raise IngestError(f"{path}: negative keyframe timestamp")
        times.insert(0, 0.0)
    return times


def keyframe_sidecar_path(video_path: str | Path) -> Path:
    return Path(str(video_path) + KEYFRAME_SIDECAR_SUFFIX)


def tick_indices(native_fps: float, target_fps: float, frame_count: int) -> list[int]:
    """Native frame index nearest to each tick k/target_fps; ties round down."""
    out = []
    k = 0
    while True:
        t = k / target_fps
        idx = math.ceil(t * native_fps - 0.5)
        if idx >= frame_count:
            break
        out.append(idx)
        k += 1
    return out


def sample_at_fps(source: FrameSource, target_fps: float) -> Iterator[Frame]:
    """Resample a source by picking the frame nearest each target-fps tick.

    Requires 0 < target_fps <= native fps; emits ceil(duration * target_fps)
    frames give or take one at the tail.
    """
    if target_fps <= 0:
        raise IngestError(f"target_fps must be positive, got {target_fps}")
    if target_fps > source.fps:
        raise IngestError(f"target_fps {target_fps} exceeds native fps {source.fps}")

    def wanted(tick: int) -> int:
        return math.ceil(tick / target_fps * source.fps - 0.5)

    next_tick = 0
    for frame in source:
        # Skip ticks already behind the stream position (sources may have
        # been seeked forward); a tick maps to at most one frame since the
        # target rate never exceeds the native rate.
        while wanted(next_tick) < frame.index:
            next_tick += 1
        if frame.index == wanted(next_tick):
            yield frame
            next_tick += 1
