"""Scorer and captioner providers: deterministic stubs plus HTTP clients.

The HTTP contract (all bodies UTF-8 JSON unless noted):

    POST /embed_image   body: PNG bytes            -> {"v": [f32, ...]}
    POST /embed_text    body: {"t": "..."}         -> {"v": [f32, ...]}
    POST /detect_text   body: PNG bytes            -> {"boxes": [{"x","y","w","h"}, ...]}
    POST /caption       body: PNG bytes            -> {"text": "..."}   (image captioner)
    POST /caption       body: frame-sequence .npz  -> {"text": "..."}   (video captioner)
    POST /caption       body: {"captions":[a, b]}  -> {"text": "..."}   (summarizer)

Clients retry 3 times with exponential backoff on connection errors,
timeouts, and 5xx responses.

The stubs need no network or models and are fully deterministic: the image
embedding is a 32-bin grayscale histogram concatenated with the mean RGB,
L2-normalized; text embeddings are unit vectors seeded from a hash of the
text; the stub text detector reports bounding boxes of connected
near-white regions.
"""

from __future__ import annotations

import hashlib
import io
import time
from dataclasses import dataclass

import numpy as np
import requests
from PIL import Image
from scipy import ndimage

from .ingest import Frame
from .scoring import TextBox

STUB_EMBED_DIM = 35  # 32 histogram bins + mean RGB

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 0.5
REQUEST_TIMEOUT_S = 30.0


class ProviderError(RuntimeError):
    pass


# --- deterministic stubs ------------------------------------------------------


class StubEmbeddingProvider:
    dim = STUB_EMBED_DIM

    def embed_image(self, frame: Frame) -> np.ndarray:
        px = frame.pixels.astype(np.float64) / 255.0
        gray = px @ np.array([0.299, 0.587, 0.114])
        hist, _ = np.histogram(gray, bins=32, range=(0.0, 1.0))
        mean_rgb = px.reshape(-1, 3).mean(axis=0)
        vec = np.concatenate([hist / gray.size, mean_rgb])
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else np.full(self.dim, 1.0 / np.sqrt(self.dim))

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)


class StubTextDetector:
    """Boxes around connected regions of near-white pixels.

    Stands in for a text detector in tests and demos; the synthetic corpus
    draws its "text" as white bars, which this recovers exactly.
    """

    def __init__(self, threshold: int = 250, min_pixels: int = 4):
        self.threshold = threshold
        self.min_pixels = min_pixels

    def detect_text(self, frame: Frame) -> list[TextBox]:
        mask = (frame.pixels >= self.threshold).all(axis=-1)
        labels, n = ndimage.label(mask)
        boxes = []
        for sl in ndimage.find_objects(labels):
            ys, xs = sl
            if mask[sl].sum() < self.min_pixels:
                continue
            boxes.append(
                TextBox(
                    x=float(xs.start),
                    y=float(ys.start),
                    w=float(xs.stop - xs.start),
                    h=float(ys.stop - ys.start),
                )
            )
        return boxes


class StubImageCaptioner:
    """Image captioner stand-in keyed on coarse frame statistics."""

    def caption_image(self, frame: Frame) -> str:
        px = frame.pixels.astype(np.float64) / 255.0
        bright = px.mean()
        dominant = "red green blue".split()[int(np.argmax(px.reshape(-1, 3).mean(axis=0)))]
        return f"a mostly {dominant} scene with brightness {bright:.2f}"


class StubVideoCaptioner:
    """Video captioner stand-in keyed on inter-frame change."""

    def caption_video(self, frames: list[Frame]) -> str:
        if len(frames) < 2:
            return "a still scene"
        deltas = [
            np.abs(b.pixels.astype(np.int16) - a.pixels.astype(np.int16)).mean() / 255.0
            for a, b in zip(frames, frames[1:])
        ]
        level = "static" if np.mean(deltas) < 0.003 else "moving"
        return f"a {level} scene over {len(frames)} frames"


class StubSummarizer:
    def summarize(self, caption_a: str, caption_b: str) -> str:
        return f"{caption_a.rstrip('.').capitalize()}; {caption_b}."


# --- HTTP clients -------------------------------------------------------------


def frame_to_png(frame: Frame) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(frame.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def frames_to_npz(frames: list[Frame]) -> bytes:
    buf = io.BytesIO()
    np.savez_compressed(
        buf,
        pixels=np.stack([f.pixels for f in frames]),
        t_s=np.array([f.t_s for f in frames]),
    )
    return buf.getvalue()


@dataclass
class HttpTransport:
    """POST with retry; shared by all remote providers."""

    base_url: str
    timeout_s: float = REQUEST_TIMEOUT_S
    attempts: int = RETRY_ATTEMPTS
    backoff_s: float = RETRY_BACKOFF_S
    session: requests.Session | None = None

    def post(self, route: str, *, data: bytes | None = None, json_body: dict | None = None) -> dict:
        sess = self.session or requests
        url = self.base_url.rstrip("/") + route
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                if json_body is not None:
                    resp = sess.post(url, json=json_body, timeout=self.timeout_s)
                else:
                    resp = sess.post(
                        url,
                        data=data,
                        headers={"Content-Type": "application/octet-stream"},
                        timeout=self.timeout_s,
                    )
                if resp.status_code >= 500:
                    last_error = ProviderError(f"{url}: server error {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise ProviderError(f"{url}: status {resp.status_code}")
                return resp.json()
            except (requests.ConnectionError, requests.Timeout) as e:
                last_error = e
        raise ProviderError(f"{url}: giving up after {self.attempts} attempts: {last_error}")


class HttpEmbeddingProvider:
    def __init__(self, transport: HttpTransport, dim: int):
        self.transport = transport
        self.dim = dim

    def embed_image(self, frame: Frame) -> np.ndarray:
        out = self.transport.post("/embed_image", data=frame_to_png(frame))
        return np.asarray(out["v"], dtype=np.float64)

    def embed_text(self, text: str) -> np.ndarray:
        out = self.transport.post("/embed_text", json_body={"t": text})
        return np.asarray(out["v"], dtype=np.float64)


class HttpTextDetector:
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def detect_text(self, frame: Frame) -> list[TextBox]:
        out = self.transport.post("/detect_text", data=frame_to_png(frame))
        return [
            TextBox(x=float(b["x"]), y=float(b["y"]), w=float(b["w"]), h=float(b["h"]))
            for b in out["boxes"]
        ]


class HttpImageCaptioner:
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def caption_image(self, frame: Frame) -> str:
        return self.transport.post("/caption", data=frame_to_png(frame))["text"]


class HttpVideoCaptioner:
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def caption_video(self, frames: list[Frame]) -> str:
        return self.transport.post("/caption", data=frames_to_npz(frames))["text"]


class HttpSummarizer:
    def __init__(self, transport: HttpTransport):
        self.transport = transport

    def summarize(self, caption_a: str, caption_b: str) -> str:
        return self.transport.post("/caption", json_body={"captions": [caption_a, caption_b]})["text"]
