"""Quick built-in consistency checks, runnable via ``fewbench selftest``.

These are smoke tests for a fresh install, not the full test suite: each
check exercises one load-bearing numeric contract end to end and prints a
single ok/FAIL line.
"""

from __future__ import annotations

import io
import math
import traceback

import numpy as np

from .api import (
    MetaLearnerSpec,
    MethodConfig,
    load_learner,
    meta_fit,
    parse_learner,
    render_learner,
)
from .dataset import SyntheticSpec, generate_synthetic, split_classes
from .evaluation import cat_accuracy, ci95, evaluate_learner
from .heads import SinkhornConfig, compute_prototypes, proto_labels, sinkhorn
from .rng import RngState
from .sampler import EpisodeSpec, episode_stream

__all__ = ["run_selftest"]


def _check_sinkhorn_marginals() -> None:
    rng = np.random.default_rng(0)
    cost = rng.uniform(0.0, 2.0, size=(12, 4))
    a = np.full(12, 1.0 / 12)
    b = np.full(4, 1.0 / 4)
    plan = sinkhorn(cost, a, b, SinkhornConfig(reg=0.5, max_iters=500, tol=1e-9))
    assert plan.converged
    assert np.max(np.abs(plan.matrix.sum(axis=1) - a)) < 1e-8
    assert np.max(np.abs(plan.matrix.sum(axis=0) - b)) < 1e-12


def _check_single_shot_prototypes() -> None:
    x = np.arange(10.0).reshape(5, 2)
    y = np.arange(5)
    protos = compute_prototypes(x, y)
    assert np.array_equal(protos.centers, x)
    assert np.array_equal(proto_labels(protos, x), y)


def _check_ci95_formula() -> None:
    acc = np.array([0.2, 0.4, 0.6, 0.8])
    expected = 1.96 * np.std(acc, ddof=1) / math.sqrt(4)
    assert abs(ci95(acc) - expected) < 1e-15
    assert cat_accuracy(np.array([1, 2, 3]), np.array([1, 0, 3])) == 2.0 / 3.0


def _check_episode_determinism() -> None:
    table = generate_synthetic(
        SyntheticSpec(num_classes=8, dim=4, samples_per_class=6, class_std=1.0,
                      mean_scale=2.0, seed=3)
    )
    spec = EpisodeSpec(n_way=5, k_shot=1)
    run1 = list(episode_stream(table, spec, 4, seed=11))
    run2 = list(episode_stream(table, spec, 4, seed=11))
    for e1, e2 in zip(run1, run2):
        assert np.array_equal(e1.support_x, e2.support_x)
        assert np.array_equal(e1.query_x, e2.query_x)
        assert np.array_equal(e1.query_y, e2.query_y)


def _check_artifact_round_trip() -> None:
    table = generate_synthetic(
        SyntheticSpec(num_classes=8, dim=4, samples_per_class=6, class_std=1.0,
                      mean_scale=2.0, seed=3)
    )
    spec = MetaLearnerSpec(method=MethodConfig(name="proto", params={}))
    learner = meta_fit(spec, table, seed=5)
    text = render_learner(learner)
    again = parse_learner(text)
    assert render_learner(again) == text


def _check_end_to_end_scoring() -> None:
    table = generate_synthetic(
        SyntheticSpec(num_classes=10, dim=8, samples_per_class=8, class_std=0.5,
                      mean_scale=2.0, seed=9)
    )
    split = split_classes(table, 5, seed=2)
    spec = MetaLearnerSpec(method=MethodConfig(name="proto", params={}))
    learner = meta_fit(spec, split.meta_train, seed=1)
    agg = evaluate_learner(
        learner, split.meta_test, EpisodeSpec(n_way=5, k_shot=1), 20, seed=1
    )
    assert 0.0 <= agg.mean <= 1.0
    assert agg.episode_count == 20


_CHECKS = [
    ("sinkhorn marginals", _check_sinkhorn_marginals),
    ("single-shot prototypes", _check_single_shot_prototypes),
    ("ci95 formula", _check_ci95_formula),
    ("episode determinism", _check_episode_determinism),
    ("artifact round trip", _check_artifact_round_trip),
    ("end-to-end scoring", _check_end_to_end_scoring),
]


def run_selftest(out: io.TextIOBase | None = None) -> bool:
    """Run all checks; print one line per check; return overall success."""
    import sys

    out = out or sys.stdout
    ok = True
    for name, check in _CHECKS:
        try:
            check()
        except Exception:
            ok = False
            print(f"FAIL {name}", file=out)
            traceback.print_exc(file=out)
        else:
            print(f"ok   {name}", file=out)
    print("selftest passed" if ok else "selftest FAILED", file=out)
    return ok
