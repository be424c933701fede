"""Pairwise preference studies ranked with bootstrapped Elo ratings.

Every competitor pair meets on every prompt, on both judgment axes, with a
fixed number of replicate votes per task. Ratings start at 1000; after each
game the expected outcomes

    E1 = 1 / (1 + 10 ** ((R2 - R1) / 400)),   E2 = 1 - E1

feed the zero-sum update R'_i = R_i + K * (S_i - E_i) with K = 1 and
S_i in {0, 1}. Because a single replay depends on game order, the final
ranking replays the game list in many seeded random orders (1000 by
default) and reports the mean and standard deviation per competitor and
axis, plus an aggregated mean across axes.

Covert attention checks (a clean sample against a degraded duplicate of
the same sample) are mixed into the schedule; they are excluded from
ranking and instead estimate annotator reliability. Annotators below the
accuracy threshold have all their votes excluded retroactively.
"""

from __future__ import annotations

import hashlib
import itertools
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

R_INIT = 1000.0
K_FACTOR = 1.0
DEFAULT_AXES = ("quality", "prompt_following")
DEFAULT_VOTES_PER_TASK = 3
DEFAULT_N_BOOT = 1000
# One covert check is appended after every 20 regular tasks.
ATTENTION_CHECK_INTERVAL = 20
ANNOTATOR_ACCURACY_THRESHOLD = 0.8
DEGRADED_SUFFIX = "::degraded"


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class Study:
    study_id: str
    competitors: tuple[str, ...]
    prompts: tuple[str, ...]
    axes: tuple[str, ...] = DEFAULT_AXES
    votes_per_task: int = DEFAULT_VOTES_PER_TASK
    seed: int = 0
    n_boot: int = DEFAULT_N_BOOT

    def __post_init__(self):
        if len(self.competitors) < 2:
            raise StudyError("a study needs at least 2 competitors")
        if len(set(self.competitors)) != len(self.competitors):
            raise StudyError("competitor ids must be unique")
        if not self.prompts:
            raise StudyError("a study needs at least 1 prompt")
        if not self.axes:
            raise StudyError("a study needs at least 1 axis")
        if self.votes_per_task < 1:
            raise StudyError("votes_per_task must be >= 1")


@dataclass(frozen=True)
class Task:
    task_id: str
    prompt: str
    prompt_index: int
    left: str
    right: str
    axis: str
    replicate: int
    is_attention_check: bool = False
    expected_winner: str | None = None  # "left" or "right" for checks

    def __post_init__(self):
        if self.left == self.right:
            raise StudyError("task sides must differ")


@dataclass(frozen=True)
class VoteRecord:
    task_id: str
    annotator_id: str
    choice: str  # "left" or "right"
    submitted_at: str = ""
    latency_ms: int = 0

    def __post_init__(self):
        if self.choice not in ("left", "right"):
            raise StudyError(f"choice must be left or right, got {self.choice!r}")


@dataclass(frozen=True)
class CompetitorRating:
    competitor: str
    axis: str
    mean: float
    std: float
    games: int


@dataclass(frozen=True)
class EloTable:
    ratings: tuple[CompetitorRating, ...]
    aggregated: dict[str, float] = field(default_factory=dict)
    flagged_annotators: tuple[str, ...] = ()
    vote_count: int = 0

    def mean(self, competitor: str, axis: str) -> float:
        for r in self.ratings:
            if r.competitor == competitor and r.axis == axis:
                return r.mean
        raise KeyError((competitor, axis))


# --- rating math ----------------------------------------------------------------


def expected_score(r1: float, r2: float) -> tuple[float, float]:
    """Expected outcomes for both players; sums to exactly 1."""
    e1 = 1.0 / (1.0 + 10.0 ** ((r2 - r1) / 400.0))
    return e1, 1.0 - e1


def update(r1: float, r2: float, s1: float, k: float = K_FACTOR) -> tuple[float, float]:
    """One rating update; conserves r1 + r2 exactly for s1 in {0, 1}."""
    if s1 not in (0.0, 1.0, 0, 1):
        raise StudyError(f"outcome must be 0 or 1, got {s1}")
    e1, e2 = expected_score(r1, r2)
    return r1 + k * (s1 - e1), r2 + k * ((1.0 - s1) - e2)


def replay_elo(
    games: Sequence[tuple[str, str]],
    competitors: Iterable[str],
    k: float = K_FACTOR,
    r_init: float = R_INIT,
) -> dict[str, float]:
    """Single sequential replay of (winner, loser) games from equal ratings."""
    ratings = {c: r_init for c in competitors}
    for winner, loser in games:
        ratings[winner], ratings[loser] = update(ratings[winner], ratings[loser], 1.0, k)
    return ratings


def bootstrap_replays(
    games: Sequence[tuple[int, int]],
    n_competitors: int,
    n_boot: int,
    seed: int,
    k: float = K_FACTOR,
    r_init: float = R_INIT,
) -> np.ndarray:
    """Final ratings of n_boot seeded random-order replays, vectorized.

    Games are (winner_index, loser_index) pairs; the return value has shape
    (n_boot, n_competitors). All replays advance in lockstep: step g applies
    each replay's g-th game under its own permutation.
    """
    rng = np.random.default_rng(seed)
    n_games = len(games)
    ratings = np.full((n_boot, n_competitors), r_init)
    if n_games == 0:
        return ratings
    winners = np.array([g[0] for g in games])
    losers = np.array([g[1] for g in games])
    perms = np.stack([rng.permutation(n_games) for _ in range(n_boot)])
    rows = np.arange(n_boot)
    for g in range(n_games):
        w = winners[perms[:, g]]
        l = losers[perms[:, g]]
        rw = ratings[rows, w]
        rl = ratings[rows, l]
        e_w = 1.0 / (1.0 + 10.0 ** ((rl - rw) / 400.0))
        delta = k * (1.0 - e_w)
        ratings[rows, w] = rw + delta
        ratings[rows, l] = rl - delta
    return ratings


# --- scheduling -----------------------------------------------------------------


def _task_id(study_id: str, *parts) -> str:
    payload = "\x1f".join([study_id, *map(str, parts)])
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


def schedule_tasks(study: Study) -> list[Task]:
    """All pairwise tasks plus covert attention checks, seeded-deterministic.

    Regular task count is C(m, 2) * prompts * axes * votes_per_task. Task
    order and left/right orientation are randomized by the study seed; one
    attention check (clean vs degraded duplicate of one competitor's sample)
    is appended after every ATTENTION_CHECK_INTERVAL regular tasks.
    """
    rng = random.Random(study.seed)
    regular: list[Task] = []
    for (pi, prompt), (ca, cb), axis in itertools.product(
        enumerate(study.prompts), itertools.combinations(study.competitors, 2), study.axes
    ):
        for rep in range(study.votes_per_task):
            regular.append(
                Task(
                    task_id=_task_id(study.study_id, prompt, ca, cb, axis, rep),
                    prompt=prompt,
                    prompt_index=pi,
                    left=ca,
                    right=cb,
                    axis=axis,
                    replicate=rep,
                )
            )
    rng.shuffle(regular)

    tasks: list[Task] = []
    check_no = 0
    for i, task in enumerate(regular):
        if rng.random() < 0.5:
            task = Task(
                task_id=task.task_id,
                prompt=task.prompt,
                prompt_index=task.prompt_index,
                left=task.right,
                right=task.left,
                axis=task.axis,
                replicate=task.replicate,
            )
        tasks.append(task)
        if (i + 1) % ATTENTION_CHECK_INTERVAL == 0:
            tasks.append(_make_check(study, rng, check_no))
            check_no += 1
    return tasks


def _make_check(study: Study, rng: random.Random, check_no: int) -> Task:
    competitor = rng.choice(study.competitors)
    prompt_index = rng.randrange(len(study.prompts))
    axis = rng.choice(study.axes)
    clean_left = rng.random() < 0.5
    degraded = competitor + DEGRADED_SUFFIX
    return Task(
        task_id=_task_id(study.study_id, "check", check_no, competitor, prompt_index, axis),
        prompt=study.prompts[prompt_index],
        prompt_index=prompt_index,
        left=competitor if clean_left else degraded,
        right=degraded if clean_left else competitor,
        axis=axis,
        replicate=0,
        is_attention_check=True,
        expected_winner="left" if clean_left else "right",
    )


# --- annotator quality ------------------------------------------------------------


def annotator_quality(
    votes: Sequence[VoteRecord], tasks: Sequence[Task]
) -> dict[str, float | None]:
    """Per-annotator accuracy on attention checks (None without exposure)."""
    checks = {t.task_id: t.expected_winner for t in tasks if t.is_attention_check}
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    annotators = {v.annotator_id for v in votes}
    for v in votes:
        expected = checks.get(v.task_id)
        if expected is None:
            continue
        total[v.annotator_id] = total.get(v.annotator_id, 0) + 1
        if v.choice == expected:
            correct[v.annotator_id] = correct.get(v.annotator_id, 0) + 1
    return {
        a: (correct.get(a, 0) / total[a]) if a in total else None for a in annotators
    }


def flagged_annotators(
    votes: Sequence[VoteRecord],
    tasks: Sequence[Task],
    threshold: float = ANNOTATOR_ACCURACY_THRESHOLD,
) -> set[str]:
    quality = annotator_quality(votes, tasks)
    return {a for a, acc in quality.items() if acc is not None and acc < threshold}


# --- ranking ------------------------------------------------------------------------


def bootstrap_ranking(
    votes: Sequence[VoteRecord],
    study: Study,
    tasks: Sequence[Task] | None = None,
    n_boot: int | None = None,
) -> EloTable:
    """Bootstrap-aggregated ratings per competitor per axis.

    Attention-check votes and all votes from flagged annotators are dropped
    first. Remaining votes become (winner, loser) games per axis; each axis
    is replayed n_boot times in seeded shuffled orders and summarized by the
    mean and std of the final ratings. The aggregated score is the mean of
    an axis means per competitor. With no usable votes every rating is the
    initial 1000 with std 0.
    """
    tasks = list(tasks) if tasks is not None else schedule_tasks(study)
    n_boot = n_boot if n_boot is not None else study.n_boot
    by_id = {t.task_id: t for t in tasks}
    flagged = flagged_annotators(votes, tasks)

    index = {c: i for i, c in enumerate(study.competitors)}
    games: dict[str, list[tuple[int, int]]] = {axis: [] for axis in study.axes}
    counts = {c: {axis: 0 for axis in study.axes} for c in study.competitors}
    used = 0
    for v in votes:
        task = by_id.get(v.task_id)
        if task is None or task.is_attention_check or v.annotator_id in flagged:
            continue
        winner = task.left if v.choice == "left" else task.right
        loser = task.right if v.choice == "left" else task.left
        games[task.axis].append((index[winner], index[loser]))
        counts[winner][task.axis] += 1
        counts[loser][task.axis] += 1
        used += 1

    ratings = []
    per_axis_means: dict[str, dict[str, float]] = {}
    for axis in study.axes:
        final = bootstrap_replays(games[axis], len(study.competitors), n_boot, seed=study.seed)
        means = final.mean(axis=0)
        stds = final.std(axis=0)
        per_axis_means[axis] = {c: float(means[i]) for c, i in index.items()}
        for c, i in index.items():
            ratings.append(
                CompetitorRating(
                    competitor=c,
                    axis=axis,
                    mean=float(means[i]),
                    std=float(stds[i]),
                    games=counts[c][axis],
                )
            )
    aggregated = {
        c: sum(per_axis_means[axis][c] for axis in study.axes) / len(study.axes)
        for c in study.competitors
    }
    return EloTable(
        ratings=tuple(ratings),
        aggregated=aggregated,
        flagged_annotators=tuple(sorted(flagged)),
        vote_count=used,
    )


def format_ranking(table: EloTable) -> str:
    """Tabular report plus machine-readable lines."""
    lines = ["competitor                axis              mean      std  games"]
    for r in sorted(table.ratings, key=lambda r: (r.axis, -r.mean)):
        lines.append(
            f"{r.competitor:<24.24}  {r.axis:<16.16}  {r.mean:8.2f}  {r.std:7.2f}  {r.games:5d}"
        )
    lines.append("")
    lines.append("aggregated:")
    for c, m in sorted(table.aggregated.items(), key=lambda kv: -kv[1]):
        lines.append(f"  {c:<24.24}  {m:8.2f}")
    lines.append("")
    for r in table.ratings:
        lines.append(f"RANK\t{r.competitor}\t{r.axis}\t{r.mean:.6f}\t{r.std:.6f}\t{r.games}")
    return "\n".join(lines)
