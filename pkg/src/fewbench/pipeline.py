"""Two-process competition flow: budgeted ingestion and scoring, phases,
three-seed orchestration, and leaderboard reporting.

Ingestion meta-trains a method and saves a learner artifact; scoring loads
the artifact and evaluates it over a seeded 600-episode stream.  Both run
under one shared wallclock budget per seed.  A phase runs the pair three
times with distinct seeds, applies the worst-of-3 rule, and appends one
entry to an append-only leaderboard file.
"""

from __future__ import annotations

import fcntl
import os
import time
from dataclasses import dataclass, field

from .api import MetaLearnerSpec, MethodConfig, METHODS, load_learner, meta_fit, save_learner
from .dataset import (
    MetaSplit,
    SyntheticSpec,
    generate_synthetic,
    load_feature_dataset,
    split_classes,
)
from .errors import (
    ArtifactError,
    BenchError,
    BudgetExceededError,
    ConfigError,
    ParseError,
    ReportError,
)
from .evaluation import AggregateScore, RunResult, evaluate_learner, final_score, render_score_report
from .sampler import ALL_REMAINING, EpisodeSpec

__all__ = [
    "BudgetClock",
    "PhaseConfig",
    "LeaderboardEntry",
    "parse_config_text",
    "load_config",
    "load_split",
    "run_ingestion",
    "run_scoring",
    "run_phase",
    "append_leaderboard_entry",
    "leaderboard_report",
]


@dataclass
class BudgetClock:
    """Monotonic wallclock budget shared by ingestion and scoring."""

    limit_seconds: float
    start: float = field(default_factory=time.monotonic)

    def elapsed(self) -> float:
        return time.monotonic() - self.start

    def remaining(self) -> float:
        return self.limit_seconds - self.elapsed()

    def expired(self) -> bool:
        return self.remaining() <= 0.0

    def check(self) -> None:
        """Raise when the budget has run out; called cooperatively in loops."""
        if self.expired():
            raise BudgetExceededError(
                f"wallclock budget of {self.limit_seconds}s exceeded "
                f"after {self.elapsed():.2f}s"
            )


# ---------------------------------------------------------------------------
# Configuration


def parse_config_text(text: str) -> dict[str, str]:
    """Parse line-oriented ``key = value`` configuration with # comments."""
    out: dict[str, str] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line_no=i)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ParseError("empty key", line_no=i)
        out[key] = value
    return out


_PRESETS = {
    # synthetic stand-ins for the published phase shapes:
    # (num_classes, samples_per_class, n_train_classes)
    "public-like": (1623, 20, 964),
    "feedback-like": (100, 600, 80),
    "final-like": (100, 600, 85),
}


@dataclass
class PhaseConfig:
    """Everything one phase run needs, resolved from a config mapping."""

    name: str
    synthetic: SyntheticSpec | None
    train_path: str | None
    test_path: str | None
    n_train_classes: int | None
    split_seed: int
    episode_spec: EpisodeSpec
    episode_count: int
    budget_seconds: float
    seeds: tuple[int, ...]
    method: MethodConfig
    data_mode: str
    workers: int
    workdir: str
    leaderboard_path: str
    raw: dict[str, str] = field(default_factory=dict)

    def artifact_path(self, seed: int) -> str:
        return os.path.join(self.workdir, f"learner_seed{seed}.txt")

    def report_path(self, seed: int) -> str:
        return os.path.join(self.workdir, f"score_seed{seed}.csv")

    def train_log_path(self, seed: int) -> str | None:
        if self.raw.get("paths.train_log", "") == "":
            return None
        return self.raw["paths.train_log"].replace("{seed}", str(seed))

    def learner_spec(self) -> MetaLearnerSpec:
        return MetaLearnerSpec(
            method=self.method,
            data_mode=self.data_mode,
            train_episode_spec=self.episode_spec,
            budget_hint=self.budget_seconds,
        )


def _get_int(cfg: dict[str, str], key: str, default: int | None) -> int | None:
    if key not in cfg:
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _get_float(cfg: dict[str, str], key: str, default: float) -> float:
    if key not in cfg:
        return default
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from None


def load_config(cfg: dict[str, str]) -> PhaseConfig:
    """Build a validated PhaseConfig from a parsed key/value mapping."""
    name = cfg.get("phase.name", "custom")
    preset = _PRESETS.get(name)

    synthetic = None
    train_path = cfg.get("data.train_path")
    test_path = cfg.get("data.test_path")
    n_train_classes = _get_int(cfg, "data.n_train_classes", None)
    if train_path is None and test_path is None:
        num_classes = _get_int(
            cfg, "data.synthetic.num_classes", preset[0] if preset else 20
        )
        samples = _get_int(
            cfg, "data.synthetic.samples_per_class", preset[1] if preset else 20
        )
        if n_train_classes is None:
            n_train_classes = preset[2] if preset else max(1, (3 * num_classes) // 4)
        synthetic = SyntheticSpec(
            num_classes=num_classes,
            dim=_get_int(cfg, "data.synthetic.dim", 16),
            samples_per_class=samples,
            class_std=_get_float(cfg, "data.synthetic.class_std", 1.0),
            mean_scale=_get_float(cfg, "data.synthetic.mean_scale", 2.0),
            seed=_get_int(cfg, "data.synthetic.seed", 7),
        )
        synthetic.validate()
    elif train_path is None or test_path is None:
        raise ConfigError("data.train_path and data.test_path must both be set")

    qpc_raw = cfg.get("sampler.query_per_class", ALL_REMAINING)
    query_per_class: int | str
    if qpc_raw == ALL_REMAINING:
        query_per_class = ALL_REMAINING
    else:
        try:
            query_per_class = int(qpc_raw)
        except ValueError:
            raise ConfigError(
                f"sampler.query_per_class must be an integer or "
                f"'{ALL_REMAINING}', got {qpc_raw!r}"
            ) from None
    episode_spec = EpisodeSpec(
        n_way=_get_int(cfg, "sampler.n_way", 5),
        k_shot=_get_int(cfg, "sampler.k_shot", 1),
        query_per_class=query_per_class,
    )
    episode_spec.validate()

    seeds_raw = cfg.get("phase.seeds", "101,202,303")
    try:
        seeds = tuple(int(s.strip()) for s in seeds_raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"phase.seeds must be comma-separated integers, got {seeds_raw!r}") from None

    method_name = cfg.get("method.name", "proto")
    prefix = f"method.{method_name}."
    params = {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}
    method = MethodConfig(name=method_name, params=params)
    method.validate()

    default_mode = "batch" if "episode" not in METHODS[method_name][0] else "episode"
    workdir = cfg.get("paths.workdir", ".")
    config = PhaseConfig(
        name=name,
        synthetic=synthetic,
        train_path=train_path,
        test_path=test_path,
        n_train_classes=n_train_classes,
        split_seed=_get_int(cfg, "data.split_seed", 1234),
        episode_spec=episode_spec,
        episode_count=_get_int(cfg, "phase.episode_count", 600),
        budget_seconds=_get_float(cfg, "phase.budget_seconds", 7200.0),
        seeds=seeds,
        method=method,
        data_mode=cfg.get("method.data_mode", default_mode),
        workers=_get_int(cfg, "phase.workers", 1),
        workdir=workdir,
        leaderboard_path=cfg.get(
            "paths.leaderboard", os.path.join(workdir, "leaderboard.csv")
        ),
        raw=dict(cfg),
    )
    if config.budget_seconds <= 0:
        raise ConfigError(f"phase.budget_seconds must be positive, got {config.budget_seconds}")
    if config.episode_count < 1:
        raise ConfigError(f"phase.episode_count must be >= 1, got {config.episode_count}")
    return config


def load_split(config: PhaseConfig) -> MetaSplit:
    """Materialize the phase's meta-train/meta-test pools."""
    if config.synthetic is not None:
        table = generate_synthetic(config.synthetic)
        return split_classes(table, config.n_train_classes, config.split_seed)
    train = load_feature_dataset(config.train_path)
    test = load_feature_dataset(config.test_path)
    return MetaSplit(meta_train=train, meta_test=test)


# ---------------------------------------------------------------------------
# Ingestion / scoring / phase


def run_ingestion(
    config: PhaseConfig,
    seed: int,
    clock: BudgetClock | None = None,
    split: MetaSplit | None = None,
) -> str:
    """Meta-train under the budget clock and save the learner artifact.

    On timeout the budget error propagates and no artifact is written.
    """
    split = split or load_split(config)
    clock.check() if clock is not None else None
    learner = meta_fit(
        config.learner_spec(),
        split.meta_train,
        seed,
        clock=clock,
        log_path=config.train_log_path(seed),
    )
    if clock is not None:
        clock.check()
    os.makedirs(config.workdir, exist_ok=True)
    path = config.artifact_path(seed)
    save_learner(learner, path)
    return path


def run_scoring(
    artifact_path: str,
    config: PhaseConfig,
    seed: int,
    clock: BudgetClock | None = None,
    split: MetaSplit | None = None,
) -> AggregateScore:
    """Load the artifact, evaluate on meta-test, write the score report."""
    if not os.path.exists(artifact_path):
        raise ArtifactError(f"artifact missing: {artifact_path}")
    learner = load_learner(artifact_path)
    split = split or load_split(config)
    score = evaluate_learner(
        learner,
        split.meta_test,
        config.episode_spec,
        config.episode_count,
        seed=seed,
        workers=config.workers,
        clock=clock,
    )
    os.makedirs(config.workdir, exist_ok=True)
    with open(config.report_path(seed), "w", encoding="utf-8") as fh:
        fh.write(render_score_report(score))
    return score


@dataclass(frozen=True)
class LeaderboardEntry:
    """One appended leaderboard line.

    Completed entries carry all three seed results; timed-out or failed
    entries leave the score fields empty.  The wallclock field is the only
    non-deterministic field and is excluded from reproducibility checks.
    """

    method: str
    final: float | None
    seed_results: tuple[tuple[float, float], ...]  # (mean, ci95) per seed
    wallclock: float
    status: str  # completed | timed_out | failed

    def render(self) -> str:
        fields = [self.method]
        fields.append("" if self.final is None else repr(self.final))
        for i in range(3):
            if i < len(self.seed_results):
                mean, ci = self.seed_results[i]
                fields += [repr(mean), repr(ci)]
            else:
                fields += ["", ""]
        fields.append(repr(self.wallclock))
        fields.append(self.status)
        return ",".join(fields)


def parse_leaderboard_entry(line: str, line_no: int | None = None) -> LeaderboardEntry:
    parts = line.split(",")
    if len(parts) != 10:
        raise ReportError(
            f"leaderboard line {line_no}: expected 10 fields, got {len(parts)}"
        )
    try:
        final = float(parts[1]) if parts[1] else None
        results = []
        for i in range(3):
            m, c = parts[2 + 2 * i], parts[3 + 2 * i]
            if m:
                results.append((float(m), float(c)))
        wallclock = float(parts[8])
        status = parts[9]
        if status not in ("completed", "timed_out", "failed"):
            raise ValueError(f"bad status {status!r}")
    except ValueError as exc:
        raise ReportError(f"leaderboard line {line_no}: {exc}") from None
    return LeaderboardEntry(
        method=parts[0], final=final, seed_results=tuple(results),
        wallclock=wallclock, status=status,
    )


def append_leaderboard_entry(path: str, entry: LeaderboardEntry) -> None:
    """Append one line under an exclusive lock (concurrent runs serialize)."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            fh.write(entry.render() + "\n")
            fh.flush()
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def run_phase(config: PhaseConfig) -> tuple[RunResult | None, LeaderboardEntry]:
    """Three seeded ingestion+scoring runs, worst-of-3, leaderboard append.

    Each seed gets a fresh budget clock shared by its ingestion and
    scoring.  A seed that times out or fails marks the whole entry; the
    competition treats an incomplete submission as having no final score.
    """
    if len(config.seeds) != 3:
        raise ConfigError(
            f"a phase run needs exactly 3 seeds, got {list(config.seeds)}"
        )
    if len(set(config.seeds)) != 3:
        raise ConfigError(f"phase seeds must be distinct, got {list(config.seeds)}")

    split = load_split(config)
    t0 = time.monotonic()
    scores: list[AggregateScore] = []
    status = "completed"
    for seed in config.seeds:
        clock = BudgetClock(limit_seconds=config.budget_seconds)
        try:
            artifact = run_ingestion(config, seed, clock=clock, split=split)
            scores.append(run_scoring(artifact, config, seed, clock=clock, split=split))
        except BudgetExceededError:
            status = "timed_out"
            break
        except BenchError:
            status = "failed"
            break
    wallclock = time.monotonic() - t0

    if status == "completed":
        result = final_score(scores)
        entry = LeaderboardEntry(
            method=config.method.name,
            final=result.final,
            seed_results=tuple((s.mean, s.ci95_halfwidth) for s in scores),
            wallclock=wallclock,
            status=status,
        )
    else:
        result = None
        entry = LeaderboardEntry(
            method=config.method.name,
            final=None,
            seed_results=tuple((s.mean, s.ci95_halfwidth) for s in scores),
            wallclock=wallclock,
            status=status,
        )
    append_leaderboard_entry(config.leaderboard_path, entry)
    return result, entry


def leaderboard_report(path: str) -> str:
    """Ranked text report: completed entries by final score (desc), ties by
    lower wallclock; timed-out and failed entries listed after, unranked."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise ReportError(f"cannot read leaderboard: {exc}") from None
    entries = [
        parse_leaderboard_entry(ln, line_no=i) for i, ln in enumerate(lines, start=1)
    ]
    completed = [e for e in entries if e.status == "completed"]
    others = [e for e in entries if e.status != "completed"]
    completed.sort(key=lambda e: (-e.final, e.wallclock))

    out = ["rank,method,final,wallclock,status"]
    for rank, e in enumerate(completed, start=1):
        out.append(f"{rank},{e.method},{e.final!r},{e.wallclock!r},{e.status}")
    for e in others:
        out.append(f"-,{e.method},,{e.wallclock!r},{e.status}")
    return "\n".join(out) + "\n"
