"""Command-line pipeline driver and study administration.

Stages share a work directory: ``videos.manifest`` holds the ingested
source records, ``clips.00000.manifest`` is the evolving annotated clip
manifest that flow/score/caption rewrite in place, and ``filter`` produces
``curated.00000.manifest`` plus a rejection report. Data goes to files;
logs go to stderr. Exit codes: 0 ok, 1 hard error, 2 config error.
"""

from __future__ import annotations

import json
import logging
import os
import stat
import sys
from pathlib import Path

import click

from . import pipeline
from .config import ConfigError, PipelineConfig, default_config_text, load_config
from .curation import (
    CALIBRATION_FRACTIONS,
    DEFAULT_PROFILE,
    apply_profile,
    build_calibration_subsets,
    load_profile,
    rejection_lines,
)
from .cuts import CutList
from .elo import format_ranking
from .manifest import (
    clip_multiplier,
    compute_stats,
    format_stats,
    read_manifest,
    read_video_manifest,
    shard_name,
    write_manifest,
    write_video_manifest,
)
from .service import ENV_BIND_ADDR, ENV_DATA_DIR, StudyStore, create_app, ranking_payload

log = logging.getLogger("vidcur")

VIDEOS_FILE = "videos.manifest"
CUTS_FILE = "cuts.jsonl"


def _clips_path(work: Path, cfg: PipelineConfig) -> Path:
    return work / shard_name(cfg.dataset, 0)


def _curated_path(work: Path, cfg: PipelineConfig) -> Path:
    return work / shard_name(cfg.dataset + ".curated", 0)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="pipeline config file (INI)")
@click.option("--jobs", type=int, default=None, help="worker processes per stage")
@click.option("--work", "work_dir", type=click.Path(), default="work",
              help="work directory for manifests and stage state")
@click.option("-v", "--verbose", is_flag=True, help="debug logging")
@click.pass_context
def main(ctx, config_path, jobs, work_dir, verbose):
    """Video dataset curation pipeline and preference-study tooling."""
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(config_path)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        ctx.exit(2)
    if jobs is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, jobs=jobs)
    ctx.obj = {"cfg": cfg, "work": Path(work_dir)}


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise click.ClickException(f"{path} not found; run `vidcur {hint}` first")
    return path


def _load_clips(path: Path):
    errors = []
    clips = list(read_manifest(path, errors=errors))
    for e in errors:
        log.warning("skipping malformed manifest line: %s", e)
    return clips


@main.command()
@click.argument("src_dir", type=click.Path(exists=True))
@click.pass_obj
def ingest(obj, src_dir):
    """Scan SRC_DIR for raw videos, emit video records + keyframe indexes."""
    cfg, work = obj["cfg"], obj["work"]
    work.mkdir(parents=True, exist_ok=True)
    videos = pipeline.ingest_dir(src_dir, cfg)
    out = work / VIDEOS_FILE
    write_video_manifest(videos, out)
    log.info("ingested %d videos -> %s", len(videos), out)


@main.command()
@click.pass_obj
def cuts(obj):
    """Detect shot boundaries with the three-level cascade."""
    cfg, work = obj["cfg"], obj["work"]
    videos = read_video_manifest(_require(work / VIDEOS_FILE, "ingest"))
    cutlists = pipeline.stage_cuts(videos, cfg, work / "cuts.state", cfg.jobs)
    rows = []
    for v in videos:
        cl = cutlists[v.video_id]
        for t, level in zip(cl.cuts_s, cl.levels):
            rows.append({"video_id": v.video_id, "t_s": t, "level": level})
    pipeline.write_json_lines(rows, work / CUTS_FILE)
    log.info("found %d cuts across %d videos", len(rows), len(videos))


@main.command()
@click.pass_obj
def clip(obj):
    """Plan keyframe-snapped clips and emit the extraction script."""
    cfg, work = obj["cfg"], obj["work"]
    videos = read_video_manifest(_require(work / VIDEOS_FILE, "ingest"))
    cuts_path = _require(work / CUTS_FILE, "cuts")
    cutlists: dict[str, list] = {v.video_id: [] for v in videos}
    levels: dict[str, list] = {v.video_id: [] for v in videos}
    with cuts_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                cutlists[row["video_id"]].append(row["t_s"])
                levels[row["video_id"]].append(row["level"])
    lists = {
        vid: CutList(video_id=vid, cuts_s=tuple(ts), levels=tuple(levels[vid]))
        for vid, ts in cutlists.items()
    }
    clips, commands = pipeline.stage_clip(videos, lists, cfg)
    out = _clips_path(work, cfg)
    write_manifest(clips, out)
    script = work / "extract_clips.sh"
    script.write_text("#!/bin/sh\nset -e\n" + "\n".join(commands) + "\n", encoding="utf-8")
    script.chmod(script.stat().st_mode | stat.S_IXUSR)
    log.info("planned %d clips (%.2fx of %d videos) -> %s",
             len(clips), clip_multiplier(len(videos), len(clips)), len(videos), out)


@main.command()
@click.pass_obj
def flow(obj):
    """Compute optical flow at the sampling rate and write motion scores."""
    cfg, work = obj["cfg"], obj["work"]
    videos = read_video_manifest(_require(work / VIDEOS_FILE, "ingest"))
    path = _require(_clips_path(work, cfg), "clip")
    clips = _load_clips(path)
    annotated = pipeline.stage_flow(
        videos, clips, cfg, work / "flow.state", work / "flows", cfg.jobs
    )
    write_manifest(annotated, path)
    log.info("motion-scored %d clips", len(annotated))


@main.command()
@click.pass_obj
def score(obj):
    """Annotate first/middle/last frames: aesthetics, similarity, text area."""
    cfg, work = obj["cfg"], obj["work"]
    videos = read_video_manifest(_require(work / VIDEOS_FILE, "ingest"))
    path = _require(_clips_path(work, cfg), "clip")
    clips = _load_clips(path)
    annotated = pipeline.stage_score(videos, clips, cfg, work / "score.state", cfg.jobs)
    write_manifest(annotated, path)
    log.info("scored %d clips", len(annotated))


@main.command()
@click.pass_obj
def caption(obj):
    """Collect the three synthetic captions per clip."""
    cfg, work = obj["cfg"], obj["work"]
    videos = read_video_manifest(_require(work / VIDEOS_FILE, "ingest"))
    path = _require(_clips_path(work, cfg), "clip")
    clips = _load_clips(path)
    annotated = pipeline.stage_caption(videos, clips, cfg, work / "caption.state", cfg.jobs)
    write_manifest(annotated, path)
    log.info("captioned %d clips", len(annotated))


@main.command()
@click.option("--axis", required=True,
              type=click.Choice(["motion", "aesthetics", "clip_similarity", "text_area"]))
@click.pass_obj
def calibrate(obj, axis):
    """Build the nested 0/12.5/25/50% removal subsets for one axis."""
    cfg, work = obj["cfg"], obj["work"]
    clips = _load_clips(_require(_clips_path(work, cfg), "clip"))
    subsets = build_calibration_subsets(clips, axis)
    for fraction in CALIBRATION_FRACTIONS:
        tag = f"{axis}_{fraction * 1000:.0f}"
        out = work / shard_name(f"{cfg.dataset}.calib.{tag}", 0)
        write_manifest(subsets[fraction], out)
        log.info("calibration subset %s: %d clips -> %s", tag, len(subsets[fraction]), out)


@main.command(name="filter")
@click.option("--profile", "profile_path", type=click.Path(), default=None,
              help="curation profile file; defaults to the built-in profile")
@click.pass_obj
def filter_cmd(obj, profile_path):
    """Apply the curation profile; write the curated manifest + rejections."""
    cfg, work = obj["cfg"], obj["work"]
    clips = _load_clips(_require(_clips_path(work, cfg), "clip"))
    profile = load_profile(profile_path) if profile_path else DEFAULT_PROFILE
    curated, rejections = apply_profile(clips, profile)
    out = _curated_path(work, cfg)
    write_manifest(curated, out)
    report = work / "rejections.jsonl"
    with report.open("w", encoding="utf-8") as fh:
        for line in rejection_lines(rejections):
            fh.write(line + "\n")
    log.info("curated %d -> %d clips (%d rejected) -> %s",
             len(clips), len(curated), len(rejections), out)


@main.command()
@click.option("--curated", is_flag=True, help="report on the curated manifest")
@click.pass_obj
def stats(obj, curated):
    """Print dataset statistics for the (curated) manifest."""
    cfg, work = obj["cfg"], obj["work"]
    path = _curated_path(work, cfg) if curated else _clips_path(work, cfg)
    clips = _load_clips(_require(path, "clip"))
    multiplier = None
    videos_path = work / VIDEOS_FILE
    if videos_path.exists():
        videos = read_video_manifest(videos_path)
        if videos:
            multiplier = clip_multiplier(len(videos), len(clips))
    click.echo(format_stats(compute_stats(clips), multiplier))


@main.command(name="synth-corpus")
@click.argument("out_dir", type=click.Path())
def synth_corpus(out_dir):
    """Generate the bundled synthetic demo corpus."""
    from .synth import make_corpus

    paths = make_corpus(out_dir)
    click.echo(f"wrote {len(paths)} videos to {out_dir}")


@main.command(name="init-config")
def init_config():
    """Print a config file with every default spelled out."""
    click.echo(default_config_text(), nl=False)


@main.group()
def study():
    """Study service lifecycle and offline ranking."""


@study.command()
@click.option("--data-dir", default=None, help=f"defaults to ${ENV_DATA_DIR} or config")
@click.option("--media-root", default=None)
@click.option("--bind", default=None, help=f"host:port, defaults to ${ENV_BIND_ADDR} or config")
@click.pass_obj
def serve(obj, data_dir, media_root, bind):
    """Run the annotation backend."""
    import uvicorn

    cfg = obj["cfg"]
    data_dir = data_dir or os.environ.get(ENV_DATA_DIR) or cfg.study.data_dir
    media_root = media_root or cfg.study.media_root
    bind = bind or os.environ.get(ENV_BIND_ADDR) or cfg.study.bind
    host, _, port = bind.partition(":")
    app = create_app(data_dir, media_root)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8008), log_level="info")


@study.command()
@click.option("--server", required=True, help="base URL of a running study service")
@click.option("--config-file", "study_config", required=True, type=click.Path(exists=True))
def create(server, study_config):
    """Register a new study from a JSON config file."""
    import requests

    body = json.loads(Path(study_config).read_text(encoding="utf-8"))
    resp = requests.post(server.rstrip("/") + "/studies", json=body, timeout=30)
    click.echo(f"{resp.status_code} {resp.text}")
    if resp.status_code not in (200, 201):
        raise click.ClickException("study creation failed")


@study.command()
@click.option("--data-dir", default=None)
@click.option("--study-id", required=True)
@click.option("--machine", is_flag=True, help="emit JSON instead of the table")
@click.pass_obj
def rank(obj, data_dir, study_id, machine):
    """Offline ranking straight from a study's vote ledger."""
    cfg = obj["cfg"]
    data_dir = data_dir or os.environ.get(ENV_DATA_DIR) or cfg.study.data_dir
    store = StudyStore(data_dir, media_root=".")
    state = store.get(study_id)
    if state is None:
        raise click.ClickException(f"no study {study_id!r} under {data_dir}")
    table = store.ranking(study_id)
    if machine:
        click.echo(json.dumps(ranking_payload(table), indent=2))
    else:
        click.echo(format_ranking(table))


def entrypoint() -> None:
    try:
        main(standalone_mode=False)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.UsageError as e:
        e.show()
        sys.exit(2)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        sys.exit(2)
    except Exception as e:  # hard errors from stages
        print(f"error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    entrypoint()
