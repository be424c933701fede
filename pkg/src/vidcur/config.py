"""Pipeline configuration: flat INI text with one section per stage.

Every tunable default lives here; ``default_config_text()`` emits a fully
commented config file with all of them spelled out.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .cuts import (
    DEFAULT_CASCADE,
    DEFAULT_DETECT_SHORT_SIDE,
    DEFAULT_MERGE_WINDOW_S,
    DEFAULT_MIN_SCENE_S,
)
from .flow import COMPUTE_SHORT_SIDE, FLOW_SAMPLE_FPS, STORE_SHORT_SIDE, FlowParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CutsConfig:
    levels: tuple[tuple[float | None, float], ...] = DEFAULT_CASCADE
    min_scene_s: float = DEFAULT_MIN_SCENE_S
    merge_window_s: float = DEFAULT_MERGE_WINDOW_S
    detect_short_side: int = DEFAULT_DETECT_SHORT_SIDE


@dataclass(frozen=True)
class ClipConfig:
    min_clip_s: float = 1.0
    # External transcoder template; {in}/{out}/{start}/{duration} placeholders.
    extract_cmd: str = "ffmpeg -ss {start} -i {in} -t {duration} -c copy {out}"


@dataclass(frozen=True)
class FlowConfig:
    sample_fps: float = FLOW_SAMPLE_FPS
    compute_short_side: int = COMPUTE_SHORT_SIDE
    store_short_side: int = STORE_SHORT_SIDE
    params: FlowParams = FlowParams()


@dataclass(frozen=True)
class ScoreConfig:
    provider: str = "stub"  # stub | http
    provider_url: str = ""
    provider_dim: int = 35
    ocr: str = "stub"  # stub | http
    ocr_url: str = ""
    aesthetic_head: str = ""  # path to the weights file; empty = zero head


@dataclass(frozen=True)
class CaptionConfig:
    image_captioner: str = "stub"  # stub | http
    image_url: str = ""
    video_captioner: str = "stub"
    video_url: str = ""
    summarizer: str = "stub"
    summarizer_url: str = ""


@dataclass(frozen=True)
class StudyConfig:
    data_dir: str = "studies"
    media_root: str = "media"
    bind: str = "127.0.0.1:8008"


@dataclass(frozen=True)
class PipelineConfig:
    jobs: int = 1
    dataset: str = "dataset"
    video_glob: str = "*.y4m"
    cuts: CutsConfig = CutsConfig()
    clip: ClipConfig = ClipConfig()
    flow: FlowConfig = FlowConfig()
    score: ScoreConfig = ScoreConfig()
    caption: CaptionConfig = CaptionConfig()
    study: StudyConfig = StudyConfig()


def _parse_levels(text: str) -> tuple[tuple[float | None, float], ...]:
    """Parse "native:0.11,8:0.14,2:0.15" into (fps, threshold) pairs."""
    levels = []
    for part in text.split(","):
        fps_s, _, thr_s = part.strip().partition(":")
        if not thr_s:
            raise ConfigError(f"bad cascade level {part!r}, want fps:threshold")
        fps = None if fps_s.strip() == "native" else float(fps_s)
        levels.append((fps, float(thr_s)))
    return tuple(levels)


def format_levels(levels: tuple[tuple[float | None, float], ...]) -> str:
    return ",".join(
        ("native" if f is None else f"{f:g}") + f":{t:g}" for f, t in levels
    )


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    try:
        return _from_parser(parser)
    except (configparser.Error, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _from_parser(p: configparser.ConfigParser) -> PipelineConfig:
    def get(section, key, default, conv=str):
        if p.has_option(section, key):
            return conv(p.get(section, key))
        return default

    base = PipelineConfig()
    flow_defaults = base.flow.params
    return PipelineConfig(
        jobs=get("pipeline", "jobs", base.jobs, int),
        dataset=get("pipeline", "dataset", base.dataset),
        video_glob=get("ingest", "video_glob", base.video_glob),
        cuts=CutsConfig(
            levels=get("cuts", "levels", base.cuts.levels, _parse_levels),
            min_scene_s=get("cuts", "min_scene_s", base.cuts.min_scene_s, float),
            merge_window_s=get("cuts", "merge_window_s", base.cuts.merge_window_s, float),
            detect_short_side=get("cuts", "detect_short_side", base.cuts.detect_short_side, int),
        ),
        clip=ClipConfig(
            min_clip_s=get("clip", "min_clip_s", base.clip.min_clip_s, float),
            extract_cmd=get("clip", "extract_cmd", base.clip.extract_cmd),
        ),
        flow=FlowConfig(
            sample_fps=get("flow", "sample_fps", base.flow.sample_fps, float),
            compute_short_side=get(
                "flow", "compute_short_side", base.flow.compute_short_side, int
            ),
            store_short_side=get("flow", "store_short_side", base.flow.store_short_side, int),
            params=FlowParams(
                levels=get("flow", "levels", flow_defaults.levels, int),
                scale=get("flow", "scale", flow_defaults.scale, float),
                iterations=get("flow", "iterations", flow_defaults.iterations, int),
                poly_n=get("flow", "poly_n", flow_defaults.poly_n, int),
                poly_sigma=get("flow", "poly_sigma", flow_defaults.poly_sigma, float),
                win_sigma=get("flow", "win_sigma", flow_defaults.win_sigma, float),
            ),
        ),
        score=ScoreConfig(
            provider=get("score", "provider", base.score.provider),
            provider_url=get("score", "provider_url", base.score.provider_url),
            provider_dim=get("score", "provider_dim", base.score.provider_dim, int),
            ocr=get("score", "ocr", base.score.ocr),
            ocr_url=get("score", "ocr_url", base.score.ocr_url),
            aesthetic_head=get("score", "aesthetic_head", base.score.aesthetic_head),
        ),
        caption=CaptionConfig(
            image_captioner=get("caption", "image_captioner", base.caption.image_captioner),
            image_url=get("caption", "image_url", base.caption.image_url),
            video_captioner=get("caption", "video_captioner", base.caption.video_captioner),
            video_url=get("caption", "video_url", base.caption.video_url),
            summarizer=get("caption", "summarizer", base.caption.summarizer),
            summarizer_url=get("caption", "summarizer_url", base.caption.summarizer_url),
        ),
        study=StudyConfig(
            data_dir=get("study", "data_dir", base.study.data_dir),
            media_root=get("study", "media_root", base.study.media_root),
            bind=get("study", "bind", base.study.bind),
        ),
    )


def default_config_text() -> str:
    c = PipelineConfig()
    fp = c.flow.params
    return f"""\
# vidcur pipeline configuration. Every key shows its default; all keys
# are optional.

[pipeline]
jobs = {c.jobs}
dataset = {c.dataset}

[ingest]
video_glob = {c.video_glob}

[cuts]
# cascade levels as fps:threshold, native first, fps descending
levels = {format_levels(c.cuts.levels)}
min_scene_s = {c.cuts.min_scene_s}
merge_window_s = {c.cuts.merge_window_s}
detect_short_side = {c.cuts.detect_short_side}

[clip]
min_clip_s = {c.clip.min_clip_s}
extract_cmd = {c.clip.extract_cmd}

[flow]
sample_fps = {c.flow.sample_fps}
compute_short_side = {c.flow.compute_short_side}
store_short_side = {c.flow.store_short_side}
levels = {fp.levels}
scale = {fp.scale}
iterations = {fp.iterations}
poly_n = {fp.poly_n}
poly_sigma = {fp.poly_sigma}
win_sigma = {fp.win_sigma}

[score]
provider = {c.score.provider}
provider_url =
provider_dim = {c.score.provider_dim}
ocr = {c.score.ocr}
ocr_url =
aesthetic_head =

[caption]
image_captioner = {c.caption.image_captioner}
image_url =
video_captioner = {c.caption.video_captioner}
video_url =
summarizer = {c.caption.summarizer}
summarizer_url =

[study]
data_dir = {c.study.data_dir}
media_root = {c.study.media_root}
bind = {c.study.bind}
"""
