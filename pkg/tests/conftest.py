"""Shared fixtures: in-memory frame sources and Y4M builders."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from vidcur.ingest import Frame


class ArraySource:
    """FrameSource over an in-memory list of RGB arrays."""

    def __init__(self, frames: list[np.ndarray], fps: float):
        self._frames = frames
        self.fps = fps
        self.height, self.width = frames[0].shape[:2]
        self.frame_count = len(frames)
        self._pos = 0

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps

    def next(self) -> Frame | None:
        if self._pos >= self.frame_count:
            return None
        i = self._pos
        self._pos += 1
        return Frame(index=i, t_s=i / self.fps, pixels=self._frames[i])

    def __iter__(self):
        while True:
            f = self.next()
            if f is None:
                return
            yield f

    def seek(self, t_s: float) -> None:
        self._pos = max(0, math.ceil(t_s * self.fps - 1e-9))


def solid(value, h=32, w=32) -> np.ndarray:
    """Solid-color RGB frame; value is a scalar gray level or an RGB triple."""
    frame = np.zeros((h, w, 3), dtype=np.uint8)
    frame[:] = value
    return frame


def build_y4m(
    planes: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    fps_num: int = 25,
    fps_den: int = 1,
    chroma: str = "420jpeg",
    header_extra: str = " Ip A1:1",
) -> bytes:
    """Raw YUV4MPEG2 bytes from explicit (Y, Cb, Cr) uint8 planes."""
    h, w = planes[0][0].shape
    out = bytearray(f"YUV4MPEG2 W{w} H{h} F{fps_num}:{fps_den}{header_extra} C{chroma}\n".encode())
    for y, cb, cr in planes:
        out += b"FRAME\n"
        out += y.tobytes() + cb.tobytes() + cr.tobytes()
    return bytes(out)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    """The bundled synthetic demo corpus, rendered once per session."""
    from vidcur.synth import make_corpus

    out = tmp_path_factory.mktemp("corpus")
    make_corpus(out)
    return out
