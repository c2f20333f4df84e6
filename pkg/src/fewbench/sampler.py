"""N-way K-shot episode and batch sampling, deterministic under a seed.

An episode draws N distinct classes uniformly from the pool, K support
examples per class, and queries from the remaining examples.  Episode
labels 0..N-1 are assigned in class-draw order, and the original class ids
are recorded in ``class_map``.  Episode ``i`` of a stream is generated
from the ``i``-th forked substream of the stream seed, so streams are
reproducible element-wise and safe to generate in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dataset import DatasetTable, render_value
from .errors import ArgumentError, ParseError, SamplingError
from .rng import RngState

__all__ = [
    "ALL_REMAINING",
    "EpisodeSpec",
    "Episode",
    "Batch",
    "RngState",
    "sample_episode",
    "episode_stream",
    "sample_batch",
    "render_episode",
    "parse_episode",
]

ALL_REMAINING = "all-remaining"


@dataclass(frozen=True)
class EpisodeSpec:
    """Shape of one few-shot task: N-way, K-shot, Q queries per class.

    ``query_per_class`` is either a positive integer or the string
    ``"all-remaining"`` (the meta-test default: every example not used for
    support becomes a query).
    """

    n_way: int = 5
    k_shot: int = 1
    query_per_class: int | str = ALL_REMAINING

    def validate(self) -> None:
        if self.n_way < 2:
            raise ArgumentError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ArgumentError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.query_per_class != ALL_REMAINING:
            if not isinstance(self.query_per_class, int) or self.query_per_class < 1:
                raise ArgumentError(
                    f"query_per_class must be '{ALL_REMAINING}' or a positive "
                    f"integer, got {self.query_per_class!r}"
                )


@dataclass(frozen=True)
class Episode:
    """One few-shot task: a labeled support set and a query set.

    Labels are episode labels in 0..N-1; ``class_map[label]`` recovers the
    original class id.  Support and query never share an example.
    """

    support_x: np.ndarray  # (N*K, d)
    support_y: np.ndarray  # (N*K,) int64 episode labels
    query_x: np.ndarray    # (Q_total, d)
    query_y: np.ndarray    # (Q_total,) int64 episode labels
    class_map: np.ndarray  # (N,) int64 original class ids

    @property
    def n_way(self) -> int:
        return len(self.class_map)


@dataclass(frozen=True)
class Batch:
    """A flat draw of (example, original class id) pairs — no episode structure."""

    x: np.ndarray          # (B, d)
    class_ids: np.ndarray  # (B,) int64


def sample_episode(pool: DatasetTable, spec: EpisodeSpec, rng: RngState) -> Episode:
    """Draw one episode from the pool under the given substream.

    Classes are chosen uniformly without replacement; support examples per
    class without replacement; queries take the remaining examples of each
    class (or Q of them).  The query set is shuffled so that position
    carries no label information.
    """
    spec.validate()
    n, k = spec.n_way, spec.k_shot
    if pool.n_classes < n:
        raise SamplingError(
            f"pool has {pool.n_classes} classes, episode needs {n}"
        )
    gen = rng.generator
    chosen = gen.choice(pool.n_classes, size=n, replace=False)

    need = k + (1 if spec.query_per_class == ALL_REMAINING else spec.query_per_class)
    sup_x, sup_y, qry_x, qry_y, ids = [], [], [], [], []
    for label, idx in enumerate(chosen):
        rec = pool.classes[int(idx)]
        count = len(rec.examples)
        if count < need:
            raise SamplingError(
                f"class {rec.class_id} has {count} examples, episode needs {need}"
            )
        perm = gen.permutation(count)
        sup_x.append(rec.examples[perm[:k]])
        sup_y.append(np.full(k, label, dtype=np.int64))
        if spec.query_per_class == ALL_REMAINING:
            q_idx = perm[k:]
        else:
            q_idx = perm[k:k + spec.query_per_class]
        qry_x.append(rec.examples[q_idx])
        qry_y.append(np.full(len(q_idx), label, dtype=np.int64))
        ids.append(rec.class_id)

    query_x = np.concatenate(qry_x)
    query_y = np.concatenate(qry_y)
    shuffle = gen.permutation(len(query_y))
    return Episode(
        support_x=np.concatenate(sup_x),
        support_y=np.concatenate(sup_y),
        query_x=query_x[shuffle],
        query_y=query_y[shuffle],
        class_map=np.asarray(ids, dtype=np.int64),
    )


def episode_stream(
    pool: DatasetTable, spec: EpisodeSpec, count: int, seed: int
) -> Iterator[Episode]:
    """Yield ``count`` episodes; episode i comes from substream i of ``seed``."""
    if count < 1:
        raise ArgumentError(f"count must be >= 1, got {count}")
    root = RngState(int(seed))
    for i in range(count):
        yield sample_episode(pool, spec, root.fork(i))


def sample_batch(
    pool: DatasetTable,
    batch_size: int,
    rng: RngState,
    balanced: bool = False,
) -> Batch:
    """Draw a flat batch, uniform over all (class, example) pairs.

    Within one call the draw is without replacement.  With
    ``balanced=True`` each class contributes exactly
    ``batch_size / n_classes`` examples (the batch-mode shape some
    competition baselines trained on).
    """
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    total = pool.total_examples
    if batch_size > total:
        raise ArgumentError(
            f"batch_size {batch_size} exceeds pool size {total}"
        )
    gen = rng.generator
    if balanced:
        n_cls = pool.n_classes
        quota, rem = divmod(batch_size, n_cls)
        if rem != 0:
            raise ArgumentError(
                f"balanced batch_size {batch_size} not divisible by "
                f"{n_cls} classes"
            )
        xs, cs = [], []
        for rec in pool.classes:
            if len(rec.examples) < quota:
                raise ArgumentError(
                    f"class {rec.class_id} has {len(rec.examples)} examples, "
                    f"balanced batch needs {quota}"
                )
            take = gen.permutation(len(rec.examples))[:quota]
            xs.append(rec.examples[take])
            cs.append(np.full(quota, rec.class_id, dtype=np.int64))
        x = np.concatenate(xs)
        class_ids = np.concatenate(cs)
        order = gen.permutation(batch_size)
        return Batch(x=x[order], class_ids=class_ids[order])

    flat_x = np.concatenate([rec.examples for rec in pool.classes])
    flat_c = np.concatenate(
        [np.full(len(rec.examples), rec.class_id, dtype=np.int64) for rec in pool.classes]
    )
    take = gen.permutation(total)[:batch_size]
    return Batch(x=flat_x[take], class_ids=flat_c[take])


def render_episode(episode: Episode) -> str:
    """Serialize an episode in the feature-table format plus role/label columns.

    Lines are ``<class_id>,<S|Q>,<episode_label>,<v1>,...,<vd>`` after the
    usual ``dim=`` header.  Used for fixture capture and cross-run diffing.
    """
    dim = episode.support_x.shape[1]
    out = [f"dim={dim}"]
    for role, xs, ys in (("S", episode.support_x, episode.support_y),
                         ("Q", episode.query_x, episode.query_y)):
        for row, label in zip(xs, ys):
            cid = episode.class_map[int(label)]
            vals = ",".join(render_value(v) for v in row)
            out.append(f"{cid},{role},{label},{vals}")
    return "\n".join(out) + "\n"


def parse_episode(text: str) -> Episode:
    """Inverse of :func:`render_episode`."""
    lines = [ln.strip() for ln in text.splitlines()]
    if not lines or not lines[0].startswith("dim="):
        raise ParseError("expected 'dim=<d>' header", line_no=1)
    try:
        dim = int(lines[0][len("dim="):])
    except ValueError:
        raise ParseError(f"bad dimension in header {lines[0]!r}", line_no=1) from None
    sup, qry = [], []
    mapping: dict[int, int] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != dim + 3:
            raise ParseError(f"expected {dim + 3} fields, got {len(parts)}", line_no=i)
        cid, role, label = int(parts[0]), parts[1], int(parts[2])
        if role not in ("S", "Q"):
            raise ParseError(f"bad role {role!r}", line_no=i)
        values = np.asarray([float(p) for p in parts[3:]], dtype=np.float64)
        if label in mapping and mapping[label] != cid:
            raise ParseError(f"label {label} maps to two class ids", line_no=i)
        mapping[label] = cid
        (sup if role == "S" else qry).append((label, values))
    if not sup or not qry:
        raise ParseError("episode needs both support (S) and query (Q) rows")
    n = max(mapping) + 1
    if sorted(mapping) != list(range(n)):
        raise ParseError(f"episode labels {sorted(mapping)} are not 0..{n - 1}")
    return Episode(
        support_x=np.vstack([v for _, v in sup]),
        support_y=np.asarray([l for l, _ in sup], dtype=np.int64),
        query_x=np.vstack([v for _, v in qry]),
        query_y=np.asarray([l for l, _ in qry], dtype=np.int64),
        class_map=np.asarray([mapping[l] for l in range(n)], dtype=np.int64),
    )
