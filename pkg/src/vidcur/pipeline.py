"""Resumable pipeline stages orchestrated by the CLI.

Every stage maps items (videos or clips) through a pure worker function and
writes its output manifest at the end. Results are also appended, one JSON
line per item, to a sidecar state file keyed by a content fingerprint
(hash of the source file bytes plus the relevant config and item fields);
rerunning a stage reuses every fingerprint-matched result, so interrupted
runs resume where they stopped and nothing is recomputed on a no-op rerun.

Workers are top-level functions over plain dicts so stages can run in a
process pool; ``executor.map`` preserves input order, which keeps output
manifests byte-identical no matter how many jobs run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import shlex
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import captioning, cuts as cuts_mod, flow as flow_mod, providers, scoring
from .config import PipelineConfig
from .ingest import keyframe_sidecar_path, load_keyframe_index, open_y4m, sample_at_fps
from .manifest import (
    ClipRecord,
    VideoRecord,
    clip_from_dict,
    clip_to_dict,
    video_to_dict,
)


class PipelineError(RuntimeError):
    pass


# --- fingerprints and the stage cache ----------------------------------------

_file_hash_cache: dict[str, str] = {}


def file_sha(path: str | Path) -> str:
    key = str(path)
    if key not in _file_hash_cache:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        _file_hash_cache[key] = h.hexdigest()[:16]
    return _file_hash_cache[key]


def fingerprint(*parts) -> str:
    def default(o):
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        raise TypeError(type(o))

    payload = json.dumps(parts, sort_keys=True, default=default)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class StageCache:
    """Append-only jsonl of {key, fp, result}; last entry per key wins."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, tuple[str, object]] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        d = json.loads(line)
                        self._entries[d["key"]] = (d["fp"], d["result"])
                    except (json.JSONDecodeError, KeyError):
                        continue  # torn write from an interrupted run

    def get(self, key: str, fp: str):
        hit = self._entries.get(key)
        if hit is not None and hit[0] == fp:
            return hit[1]
        return None

    def put(self, key: str, fp: str, result) -> None:
        self._entries[key] = (fp, result)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "fp": fp, "result": result}) + "\n")
            fh.flush()


def run_stage(
    items: Sequence[tuple[str, str, dict]],
    worker: Callable[[dict], dict],
    cache: StageCache,
    jobs: int,
) -> list[dict]:
    """Map (key, fingerprint, payload) items through the worker with caching."""
    results: list[dict | None] = []
    pending: list[tuple[int, str, str, dict]] = []
    for key, fp, payload in items:
        hit = cache.get(key, fp)
        results.append(hit)
        if hit is None:
            pending.append((len(results) - 1, key, fp, payload))

    if pending:
        payloads = [p for _, _, _, p in pending]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                computed = list(pool.map(worker, payloads, chunksize=1))
        else:
            computed = [worker(p) for p in payloads]
        for (slot, key, fp, _), result in zip(pending, computed):
            cache.put(key, fp, result)
            results[slot] = result
    return results  # type: ignore[return-value]


# --- ingest -------------------------------------------------------------------


def ingest_dir(src_dir: str | Path, cfg: PipelineConfig) -> list[VideoRecord]:
    """Scan a directory for raw videos and build their records.

    Keyframe timestamps come from the ``<video>.kf.txt`` sidecar when
    present; otherwise only the stream start is assumed seekable.
    """
    src_dir = Path(src_dir)
    records = []
    for path in sorted(src_dir.glob(cfg.video_glob)):
        with open_y4m(path) as src:
            duration = src.frame_count / src.fps
            sidecar = keyframe_sidecar_path(path)
            if sidecar.exists():
                keyframes = [t for t in load_keyframe_index(sidecar) if t < duration]
            else:
                keyframes = [0.0]
            records.append(
                VideoRecord(
                    video_id=path.stem,
                    uri=str(path),
                    duration_s=duration,
                    fps=src.fps,
                    width=src.width,
                    height=src.height,
                    keyframes_s=tuple(keyframes),
                )
            )
    if not records:
        raise PipelineError(f"no videos matching {cfg.video_glob!r} under {src_dir}")
    return records


# --- cut detection --------------------------------------------------------------


def cuts_worker(payload: dict) -> dict:
    cfg = _cuts_cfg_from(payload["cfg"])
    with open_y4m(payload["uri"]) as src:
        cl = cuts_mod.detect_cascade(
            src,
            payload["video_id"],
            levels=cfg["levels"],
            min_scene_s=cfg["min_scene_s"],
            merge_window_s=cfg["merge_window_s"],
            detect_short_side=cfg["detect_short_side"],
        )
    return {"cuts_s": list(cl.cuts_s), "levels": list(cl.levels)}


def _cuts_cfg_from(d: dict) -> dict:
    return {
        "levels": tuple((lv[0], lv[1]) for lv in d["levels"]),
        "min_scene_s": d["min_scene_s"],
        "merge_window_s": d["merge_window_s"],
        "detect_short_side": d["detect_short_side"],
    }


def stage_cuts(
    videos: Sequence[VideoRecord], cfg: PipelineConfig, state_path: Path, jobs: int
) -> dict[str, cuts_mod.CutList]:
    cuts_cfg = {
        "levels": [list(lv) for lv in cfg.cuts.levels],
        "min_scene_s": cfg.cuts.min_scene_s,
        "merge_window_s": cfg.cuts.merge_window_s,
        "detect_short_side": cfg.cuts.detect_short_side,
    }
    cache = StageCache(state_path)
    items = []
    for v in videos:
        fp = fingerprint(file_sha(v.uri), cuts_cfg)
        items.append((v.video_id, fp, {"video_id": v.video_id, "uri": v.uri, "cfg": cuts_cfg}))
    results = run_stage(items, cuts_worker, cache, jobs)
    return {
        v.video_id: cuts_mod.CutList(
            video_id=v.video_id, cuts_s=tuple(r["cuts_s"]), levels=tuple(r["levels"])
        )
        for v, r in zip(videos, results)
    }


# --- clip planning ----------------------------------------------------------------


def stage_clip(
    videos: Sequence[VideoRecord],
    cutlists: dict[str, cuts_mod.CutList],
    cfg: PipelineConfig,
) -> tuple[list[ClipRecord], list[str]]:
    """Plan clips and render the external extraction command script."""
    clips: list[ClipRecord] = []
    commands: list[str] = []
    for v in videos:
        plan = cuts_mod.plan_clips(
            cutlists[v.video_id], list(v.keyframes_s), v.duration_s, cfg.clip.min_clip_s
        )
        for i, (start, end) in enumerate(plan.spans):
            clip_id = f"{v.video_id}-{i:03d}"
            clips.append(
                ClipRecord(clip_id=clip_id, video_id=v.video_id, start_s=start, end_s=end)
            )
            out_name = f"{clip_id}.mp4"
            commands.append(
                cfg.clip.extract_cmd.replace("{in}", shlex.quote(v.uri))
                .replace("{out}", shlex.quote(out_name))
                .replace("{start}", f"{start:.3f}")
                .replace("{duration}", f"{end - start:.3f}")
            )
    return clips, commands


# --- per-clip frame access ----------------------------------------------------------


def clip_sampled_frames(uri: str, start_s: float, end_s: float, sample_fps: float):
    """Frames on the global sample grid that fall inside [start_s, end_s)."""
    with open_y4m(uri) as src:
        src.seek(start_s)
        frames = itertools.takewhile(
            lambda f: f.t_s < end_s - 1e-9, sample_at_fps(src, sample_fps)
        )
        return [f for f in frames if f.t_s >= start_s]


# --- optical flow ---------------------------------------------------------------------


def flow_worker(payload: dict) -> dict:
    fp = flow_mod.FlowParams(**payload["params"])
    frames = clip_sampled_frames(
        payload["uri"], payload["start_s"], payload["end_s"], payload["sample_fps"]
    )
    if len(frames) < 2:
        return {"motion_score": 0.0, "flags": ["too_short"], "pairs": 0}
    stored = flow_mod.frames_to_flows(
        frames,
        payload["clip_id"],
        params=fp,
        compute_short_side=payload["compute_short_side"],
        store_short_side=payload["store_short_side"],
    )
    short_side = min(
        payload["compute_short_side"],
        min(frames[0].pixels.shape[0], frames[0].pixels.shape[1]),
    )
    score = flow_mod.motion_score(stored, short_side)
    flags = ["flow_undersized"] if any(s.undersized for s in stored) else []
    if payload["flow_dir"]:
        out = Path(payload["flow_dir"]) / (payload["clip_id"].replace(":", "_") + ".flow")
        flow_mod.write_flow_file(out, stored)
    return {"motion_score": score, "flags": flags, "pairs": len(stored)}


def stage_flow(
    videos: Sequence[VideoRecord],
    clips: Sequence[ClipRecord],
    cfg: PipelineConfig,
    state_path: Path,
    flow_dir: Path | None,
    jobs: int,
) -> list[ClipRecord]:
    by_id = {v.video_id: v for v in videos}
    if flow_dir is not None:
        flow_dir.mkdir(parents=True, exist_ok=True)
    params = dataclasses.asdict(cfg.flow.params)
    items = []
    for c in clips:
        v = by_id[c.video_id]
        payload = {
            "clip_id": c.clip_id,
            "uri": v.uri,
            "start_s": c.start_s,
            "end_s": c.end_s,
            "sample_fps": cfg.flow.sample_fps,
            "compute_short_side": cfg.flow.compute_short_side,
            "store_short_side": cfg.flow.store_short_side,
            "params": params,
            "flow_dir": str(flow_dir) if flow_dir else "",
        }
        fp = fingerprint(file_sha(v.uri), c.start_s, c.end_s, params, cfg.flow.sample_fps,
                         cfg.flow.compute_short_side, cfg.flow.store_short_side)
        items.append((c.clip_id, fp, payload))
    results = run_stage(items, flow_worker, StageCache(state_path), jobs)
    out = []
    for c, r in zip(clips, results):
        out.append(
            dataclasses.replace(
                c, motion_score=r["motion_score"], flags=c.flags | set(r["flags"])
            )
        )
    return out


# --- frame scoring -----------------------------------------------------------------------


def _build_provider(score_cfg: dict):
    if score_cfg["provider"] == "http":
        transport = providers.HttpTransport(base_url=score_cfg["provider_url"])
        return providers.HttpEmbeddingProvider(transport, dim=score_cfg["provider_dim"])
    return providers.StubEmbeddingProvider()


def _build_ocr(score_cfg: dict):
    if score_cfg["ocr"] == "http":
        return providers.HttpTextDetector(providers.HttpTransport(base_url=score_cfg["ocr_url"]))
    return providers.StubTextDetector()


def _build_head(score_cfg: dict, dim: int) -> scoring.AestheticHead:
    if score_cfg["aesthetic_head"]:
        return scoring.load_aesthetic_head(score_cfg["aesthetic_head"])
    return scoring.AestheticHead(weights=np.zeros(dim), bias=0.0)


def score_worker(payload: dict) -> dict:
    clip = clip_from_dict(payload["clip"])
    score_cfg = payload["score_cfg"]
    provider = _build_provider(score_cfg)
    head = _build_head(score_cfg, provider.dim)
    ocr = _build_ocr(score_cfg)
    with open_y4m(payload["uri"]) as src:
        scored = scoring.score_clip_frames(clip, src, provider, head, ocr)
    return {"clip": clip_to_dict(scored)}


def stage_score(
    videos: Sequence[VideoRecord],
    clips: Sequence[ClipRecord],
    cfg: PipelineConfig,
    state_path: Path,
    jobs: int,
) -> list[ClipRecord]:
    by_id = {v.video_id: v for v in videos}
    score_cfg = dataclasses.asdict(cfg.score)
    head_fp = file_sha(cfg.score.aesthetic_head) if cfg.score.aesthetic_head else ""
    items = []
    for c in clips:
        v = by_id[c.video_id]
        payload = {"clip": clip_to_dict(c), "uri": v.uri, "score_cfg": score_cfg}
        fp = fingerprint(file_sha(v.uri), clip_to_dict(c), score_cfg, head_fp)
        items.append((c.clip_id, fp, payload))
    results = run_stage(items, score_worker, StageCache(state_path), jobs)
    return [clip_from_dict(r["clip"]) for r in results]


# --- captioning -------------------------------------------------------------------------------


def _build_captioners(caption_cfg: dict):
    def transport(url):
        return providers.HttpTransport(base_url=url)

    image = (
        providers.HttpImageCaptioner(transport(caption_cfg["image_url"]))
        if caption_cfg["image_captioner"] == "http"
        else providers.StubImageCaptioner()
    )
    video = (
        providers.HttpVideoCaptioner(transport(caption_cfg["video_url"]))
        if caption_cfg["video_captioner"] == "http"
        else providers.StubVideoCaptioner()
    )
    summarizer = (
        providers.HttpSummarizer(transport(caption_cfg["summarizer_url"]))
        if caption_cfg["summarizer"] == "http"
        else providers.StubSummarizer()
    )
    return image, video, summarizer


def caption_worker(payload: dict) -> dict:
    clip = clip_from_dict(payload["clip"])
    image, video, summarizer = _build_captioners(payload["caption_cfg"])
    frames = clip_sampled_frames(
        payload["uri"], payload["start_s"], payload["end_s"], payload["sample_fps"]
    )
    if not frames:
        return {"clip": clip_to_dict(clip.with_flags("too_short"))}
    captions, flags = captioning.caption_clip(frames, image, video, summarizer)
    merged = dataclasses.replace(clip, captions=captions, flags=clip.flags | flags)
    return {"clip": clip_to_dict(merged)}


def stage_caption(
    videos: Sequence[VideoRecord],
    clips: Sequence[ClipRecord],
    cfg: PipelineConfig,
    state_path: Path,
    jobs: int,
) -> list[ClipRecord]:
    by_id = {v.video_id: v for v in videos}
    caption_cfg = dataclasses.asdict(cfg.caption)
    items = []
    for c in clips:
        v = by_id[c.video_id]
        payload = {
            "clip": clip_to_dict(c),
            "uri": v.uri,
            "start_s": c.start_s,
            "end_s": c.end_s,
            "sample_fps": cfg.flow.sample_fps,
            "caption_cfg": caption_cfg,
        }
        fp = fingerprint(file_sha(v.uri), c.start_s, c.end_s, caption_cfg)
        items.append((c.clip_id, fp, payload))
    results = run_stage(items, caption_worker, StageCache(state_path), jobs)
    return [clip_from_dict(r["clip"]) for r in results]


# --- misc ----------------------------------------------------------------------------


def write_json_lines(rows: Iterable[dict], path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n")
            n += 1
    return n


def video_rows(videos: Sequence[VideoRecord]) -> list[dict]:
    return [video_to_dict(v) for v in videos]
