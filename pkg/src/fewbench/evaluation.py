"""Episode scoring, aggregation, confidence intervals, worst-of-3 rule.

A learner is evaluated by sampling a seeded stream of episodes, fitting a
predictor on each support set, and scoring its query predictions with
categorical accuracy — query labels never reach the method.  Per-episode
accuracies aggregate to a mean with a normal-approximation 95% confidence
half-width over episodes.  A full protocol run repeats this three times
with distinct seeds and reports the worst mean.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArgumentError,
    BudgetExceededError,
    EvaluationError,
    ProtocolError,
    ShapeError,
)
from .sampler import EpisodeSpec, episode_stream

__all__ = [
    "EpisodeScore",
    "AggregateScore",
    "RunResult",
    "cat_accuracy",
    "ci95",
    "evaluate_learner",
    "final_score",
    "render_score_report",
]


@dataclass(frozen=True)
class EpisodeScore:
    episode_index: int
    accuracy: float
    query_count: int


@dataclass(frozen=True)
class AggregateScore:
    """Mean accuracy over an episode stream with its 95% CI half-width."""

    mean: float
    ci95_halfwidth: float
    episode_count: int
    seed: int
    episodes: tuple[EpisodeScore, ...] = ()


@dataclass(frozen=True)
class RunResult:
    """Three seeded aggregate scores and the worst-of-3 final."""

    per_seed: tuple[AggregateScore, ...]
    final: float


def cat_accuracy(predicted: np.ndarray, true: np.ndarray) -> float:
    """Fraction of positions where the labels agree."""
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape or predicted.ndim != 1:
        raise ShapeError(
            f"label shapes {predicted.shape} / {true.shape} do not match"
        )
    if len(true) == 0:
        raise ShapeError("cannot score an empty label vector")
    return float((predicted == true).mean())


def ci95(accuracies) -> float:
    """1.96 * sample std (n-1 denominator) / sqrt(n) over episode accuracies."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.ndim != 1 or len(acc) < 2:
        raise ArgumentError("ci95 needs at least 2 per-episode accuracies")
    return float(1.96 * acc.std(ddof=1) / np.sqrt(len(acc)))


def evaluate_learner(
    learner,
    pool,
    spec: EpisodeSpec,
    episode_count: int = 600,
    *,
    seed: int,
    workers: int = 1,
    clock=None,
) -> AggregateScore:
    """Score a learner over a seeded episode stream.

    Per episode: ``learner.fit(support_x, support_y)`` then
    ``predictor.predict(query_x)``; true query labels stay on this side of
    the call.  Any episode failure aborts, naming the episode index; a
    budget ``clock`` is checked before each episode and the raised
    timeout records how many episodes completed.
    """
    if episode_count < 1:
        raise ArgumentError(f"episode_count must be >= 1, got {episode_count}")
    if workers < 1:
        raise ArgumentError(f"workers must be >= 1, got {workers}")

    def score_one(index: int, episode) -> EpisodeScore:
        try:
            predictor = learner.fit(episode.support_x, episode.support_y)
            predicted = predictor.predict(episode.query_x)
            acc = cat_accuracy(np.asarray(predicted), episode.query_y)
        except BudgetExceededError:
            raise
        except Exception as exc:
            raise EvaluationError(
                f"episode {index} failed: {exc}", episode_index=index
            ) from exc
        return EpisodeScore(
            episode_index=index, accuracy=acc, query_count=len(episode.query_y)
        )

    stream = episode_stream(pool, spec, episode_count, seed)
    scores: list[EpisodeScore] = []
    if workers == 1:
        for i, episode in enumerate(stream):
            if clock is not None:
                try:
                    clock.check()
                except BudgetExceededError as exc:
                    raise BudgetExceededError(str(exc), completed=i) from None
            scores.append(score_one(i, episode))
    else:
        episodes = list(stream)
        with ThreadPoolExecutor(max_workers=workers) as pool_:
            futures = [
                pool_.submit(score_one, i, ep) for i, ep in enumerate(episodes)
            ]
            for i, fut in enumerate(futures):
                if clock is not None:
                    try:
                        clock.check()
                    except BudgetExceededError as exc:
                        for later in futures[i:]:
                            later.cancel()
                        raise BudgetExceededError(str(exc), completed=i) from None
                scores.append(fut.result())

    accs = [s.accuracy for s in scores]
    return AggregateScore(
        mean=float(np.mean(accs)),
        ci95_halfwidth=ci95(accs) if len(accs) >= 2 else 0.0,
        episode_count=episode_count,
        seed=int(seed),
        episodes=tuple(scores),
    )


def final_score(scores) -> RunResult:
    """Worst-of-3 rule: the final is the minimum of the three seeded means."""
    scores = tuple(scores)
    if len(scores) != 3:
        raise ProtocolError(f"final_score needs exactly 3 scores, got {len(scores)}")
    seeds = [s.seed for s in scores]
    if len(set(seeds)) != 3:
        raise ProtocolError(f"run seeds must be distinct, got {seeds}")
    return RunResult(per_seed=scores, final=min(s.mean for s in scores))


def render_score_report(score: AggregateScore) -> str:
    """Machine-parseable score report, stable field order.

    One ``episode,<index>,<accuracy>`` line per episode, then a single
    ``aggregate,<mean>,<ci95>,<count>,<seed>`` line.
    """
    lines = [
        f"episode,{s.episode_index},{s.accuracy!r}" for s in score.episodes
    ]
    lines.append(
        f"aggregate,{score.mean!r},{score.ci95_halfwidth!r},"
        f"{score.episode_count},{score.seed}"
    )
    return "\n".join(lines) + "\n"
