"""Synthetic caption collection and the weighted caption sampling rule.

Each clip receives up to three captions: an image caption of the mid-frame,
a video caption over the clip's sampled frames, and a summary of those two
produced by a text model. The summary backend is expected to apply the
prompt in SUMMARY_PROMPT_TEMPLATE to the two input captions.

Downstream consumers draw one caption per use with weights favoring the
image captioner (0.5 image / 0.25 video / 0.25 summary), renormalized over
whichever sources are present.
"""

from __future__ import annotations

import random
from typing import Protocol, Sequence

from .ingest import Frame
from .manifest import Caption

SUMMARY_PROMPT_TEMPLATE = (
    "Combine the two video descriptions below into one fluent sentence that "
    "keeps the spatial details of the first and the actions of the second. "
    "Reply with the sentence only.\n"
    "Description 1: {caption_a}\n"
    "Description 2: {caption_b}"
)

DEFAULT_CAPTION_WEIGHTS = {"coca": 0.5, "vblip": 0.25, "llm_summary": 0.25}


class CaptioningError(RuntimeError):
    pass


class ImageCaptioner(Protocol):
    def caption_image(self, frame: Frame) -> str: ...


class VideoCaptioner(Protocol):
    def caption_video(self, frames: list[Frame]) -> str: ...


class Summarizer(Protocol):
    def summarize(self, caption_a: str, caption_b: str) -> str: ...


def _clean(text: str) -> str:
    """Strip control characters; captions are otherwise stored verbatim."""
    return "".join(ch for ch in text if ch >= " " or ch in "\t").strip()


def caption_clip(
    frames: Sequence[Frame],
    image_captioner: ImageCaptioner,
    video_captioner: VideoCaptioner,
    summarizer: Summarizer,
) -> tuple[tuple[Caption, ...], frozenset[str]]:
    """Run all three captioners over one clip's sampled frames.

    Returns the captions in fixed source order (coca, vblip, llm_summary)
    plus failure flags. A captioner failure (exception or empty text) drops
    that source and flags it; the summary needs both inputs, so it is
    skipped with ``llm_skipped`` when either is missing.
    """
    if not frames:
        raise CaptioningError("caption_clip needs at least one frame")
    flags: set[str] = set()
    captions: list[Caption] = []

    mid_frame = frames[len(frames) // 2]
    coca_text = vblip_text = None
    try:
        coca_text = _clean(image_captioner.caption_image(mid_frame))
    except Exception:
        pass
    if coca_text:
        captions.append(Caption(source="coca", text=coca_text))
    else:
        flags.add("coca_failed")

    try:
        vblip_text = _clean(video_captioner.caption_video(list(frames)))
    except Exception:
        pass
    if vblip_text:
        captions.append(Caption(source="vblip", text=vblip_text))
    else:
        flags.add("vblip_failed")

    if coca_text and vblip_text:
        summary_text = None
        try:
            summary_text = _clean(summarizer.summarize(coca_text, vblip_text))
        except Exception:
            pass
        if summary_text:
            captions.append(Caption(source="llm_summary", text=summary_text))
        else:
            flags.add("llm_failed")
    else:
        flags.add("llm_skipped")

    return tuple(captions), frozenset(flags)


def sample_caption(
    captions: Sequence[Caption],
    seed: int,
    weights: dict[str, float] | None = None,
) -> Caption:
    """Draw one caption with source weights renormalized over present sources.

    Pure function of (captions, seed): the same inputs always return the
    same caption.
    """
    if not captions:
        raise CaptioningError("cannot sample from an empty caption list")
    weights = weights or DEFAULT_CAPTION_WEIGHTS
    probs = [weights.get(c.source, 0.0) for c in captions]
    total = sum(probs)
    if total <= 0.0:
        probs = [1.0] * len(captions)
        total = float(len(captions))
    rng = random.Random(seed)
    x = rng.random() * total
    acc = 0.0
    for caption, p in zip(captions, probs):
        acc += p
        if x < acc:
            return caption
    return captions[-1]
