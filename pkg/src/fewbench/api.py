"""The three-level method contract: meta-learner -> learner -> predictor.

``meta_fit`` consumes a meta-train pool and produces a ``LearnerState``;
``LearnerState.fit`` consumes one episode's support set and produces a
``PredictorState``; ``PredictorState.predict`` labels query vectors.  Six
built-in methods implement the contract (plus a test-only sleeper used to
exercise budget enforcement).  Learners serialize to a versioned text
artifact so the ingestion and scoring processes can hand off through the
filesystem alone.
"""

from __future__ import annotations

import ast
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import fomaml as fm
from . import heads
from .dataset import DatasetTable, render_value
from .errors import ArtifactError, ConfigError, EpisodeFormatError
from .rng import RngState
from .sampler import EpisodeSpec, sample_batch

__all__ = [
    "METHODS",
    "MethodConfig",
    "MetaLearnerSpec",
    "Provenance",
    "LearnerState",
    "PredictorState",
    "meta_fit",
    "save_learner",
    "load_learner",
    "render_learner",
    "parse_learner",
]

ARTIFACT_MAGIC = "MDLART1"

# substream tags under the meta-training seed
_PRETRAIN_STREAM = 2

#: method name -> (allowed data modes, transductive?)
METHODS: dict[str, tuple[tuple[str, ...], bool]] = {
    "proto": (("episode",), False),
    "fomaml": (("episode",), False),
    "linear": (("batch",), False),
    "ptmap": (("episode", "batch"), True),
    "qda": (("episode", "batch"), False),
    "rect": (("episode", "batch"), True),
    # test-only: burns wallclock in meta_fit so budget enforcement can be
    # exercised without a slow real method.
    "sleeper": (("episode", "batch"), False),
}


@dataclass(frozen=True)
class MethodConfig:
    """Selects one method and carries its hyperparameter overrides."""

    name: str
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.name not in METHODS:
            raise ConfigError(
                f"unknown method {self.name!r}; known: {sorted(METHODS)}"
            )

    def get(self, key: str, default):
        value = self.params.get(key, default)
        if default is None or value is None:
            return value
        if isinstance(default, bool):
            # bool("false") would be True; parse the usual spellings instead
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ConfigError(
                    f"method parameter {key}={value!r} is not a valid bool"
                )
            return bool(value)
        try:
            return type(default)(value)
        except (TypeError, ValueError):
            raise ConfigError(
                f"method parameter {key}={value!r} is not a valid "
                f"{type(default).__name__}"
            ) from None


@dataclass(frozen=True)
class MetaLearnerSpec:
    """What to meta-train: the method, its data mode, and the episode shape."""

    method: MethodConfig
    data_mode: str = "episode"
    train_episode_spec: EpisodeSpec | None = None
    budget_hint: float = 7200.0

    def validate(self) -> None:
        self.method.validate()
        modes, _ = METHODS[self.method.name]
        if self.data_mode not in ("episode", "batch"):
            raise ConfigError(f"data_mode must be 'episode' or 'batch', got {self.data_mode!r}")
        if self.data_mode not in modes:
            raise ConfigError(
                f"method {self.method.name!r} does not support data_mode "
                f"{self.data_mode!r} (supports: {'/'.join(modes)})"
            )


@dataclass(frozen=True)
class Provenance:
    seed: int
    episodes_consumed: int = 0
    batches_consumed: int = 0


@dataclass
class PredictorState:
    """Episode-adapted state; ``predict`` labels query vectors.

    For transductive methods the batched call over the full query set is
    the unit of purity: results are computed jointly, cached keyed by the
    query bytes, and re-served identically on repeat calls.
    """

    method: MethodConfig
    labels: np.ndarray  # episode labels this predictor can emit, 0..N-1
    state: dict
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def transductive(self) -> bool:
        return METHODS[self.method.name][1]

    def predict(self, query_x: np.ndarray) -> np.ndarray:
        """One episode label per query row; pure given the query set."""
        query_x = np.asarray(query_x, dtype=np.float64)
        if query_x.ndim == 1:
            query_x = query_x[None, :]
        if self.transductive:
            key = query_x.tobytes()
            with self._lock:
                if key not in self._cache:
                    self._cache[key] = self._predict_now(query_x)
                return self._cache[key].copy()
        return self._predict_now(query_x)

    def _predict_now(self, query_x: np.ndarray) -> np.ndarray:
        name = self.method.name
        st = self.state
        if name == "proto":
            return heads.proto_labels(st["prototypes"], query_x)
        if name == "ptmap":
            return heads.ptmap_fit_predict(
                st["support_x"], st["support_y"], query_x,
                pt_params=st["pt_params"],
                sinkhorn_config=st["sinkhorn_config"],
                n_iters=st["n_iters"], step_size=st["step_size"],
            )
        if name == "qda":
            return heads.qda_predict(st["model"], query_x)
        if name == "linear":
            z = (query_x - st["feat_mean"]) / st["feat_std"]
            return heads.linear_head_predict(st["head"], z)
        if name == "rect":
            return heads.rectified_proto_predict(
                st["support_x"], st["support_y"], query_x, metric=st["metric"]
            )
        if name == "fomaml":
            logits = fm.mlp_forward(st["adapted"], query_x)
            return np.argmax(logits, axis=1)
        if name == "sleeper":
            return np.zeros(len(query_x), dtype=np.int64)
        raise ConfigError(f"unknown method {name!r}")


@dataclass
class LearnerState:
    """Output of meta-training: method tag, learned parameters, provenance."""

    method: MethodConfig
    arrays: dict[str, np.ndarray]
    provenance: Provenance

    def fit(self, support_x: np.ndarray, support_y: np.ndarray) -> PredictorState:
        """Adapt to one episode's support set; the learner is not mutated."""
        name = self.method.name
        cfg = self.method
        n_way, _ = heads.support_structure(support_x, support_y)
        support_x = np.asarray(support_x, dtype=np.float64)
        support_y = np.asarray(support_y)
        labels = np.arange(n_way)

        if name == "proto":
            protos = heads.compute_prototypes(
                support_x, support_y,
                metric=cfg.get("metric", "euclidean"),
                temperature=cfg.get("temperature", 1.0),
            )
            state = {"prototypes": protos}
        elif name == "ptmap":
            state = {
                "support_x": support_x.copy(),
                "support_y": support_y.copy(),
                "pt_params": heads.PowerTransformParams(
                    beta=cfg.get("beta", 0.5),
                    epsilon=cfg.get("epsilon", 1e-6),
                    unit_normalize=cfg.get("unit_normalize", True),
                ),
                "sinkhorn_config": heads.SinkhornConfig(
                    reg=cfg.get("reg", heads.PTMAP_SINKHORN.reg),
                    max_iters=cfg.get("max_iters", heads.PTMAP_SINKHORN.max_iters),
                    tol=cfg.get("tol", heads.PTMAP_SINKHORN.tol),
                ),
                "n_iters": cfg.get("n_iters", 20),
                "step_size": cfg.get("step_size", 0.2),
            }
        elif name == "qda":
            state = {"model": heads.qda_fit(
                support_x, support_y, shrinkage=cfg.get("shrinkage", 0.5)
            )}
        elif name == "linear":
            mean = self.arrays.get("feat_mean")
            std = self.arrays.get("feat_std")
            if mean is None or std is None:
                raise EpisodeFormatError(
                    "linear learner lacks feature statistics; run meta_fit first"
                )
            z = (support_x - mean) / std
            head = heads.linear_head_fit(
                z, support_y,
                epochs=cfg.get("epochs", 10),
                step_size=cfg.get("step_size", 0.001),
            )
            state = {"head": head, "feat_mean": mean, "feat_std": std}
        elif name == "rect":
            state = {
                "support_x": support_x.copy(),
                "support_y": support_y.copy(),
                "metric": cfg.get("metric", "euclidean"),
            }
        elif name == "fomaml":
            params = fm.MlpParams(
                W1=self.arrays["W1"], b1=self.arrays["b1"],
                W2=self.arrays["W2"], b2=self.arrays["b2"],
            )
            if params.W2.shape[0] != n_way:
                raise EpisodeFormatError(
                    f"learner trained {params.W2.shape[0]}-way, support is {n_way}-way"
                )
            inner = fm.InnerConfig(
                steps=cfg.get("inner_steps", 5), lr=cfg.get("inner_lr", 0.05)
            )
            adapted = fm.inner_adapt(params, support_x, support_y, inner)
            state = {"adapted": adapted}
        elif name == "sleeper":
            state = {}
        else:
            raise ConfigError(f"unknown method {name!r}")
        return PredictorState(method=self.method, labels=labels, state=state)


def meta_fit(
    spec: MetaLearnerSpec,
    meta_train: DatasetTable,
    seed: int,
    clock=None,
    log_path: str | None = None,
) -> LearnerState:
    """Run the configured method's meta-training; deterministic under seed.

    The episode-time heads have nothing to learn from meta-train data at
    this scale and return an empty parameter set.  The transfer head
    learns per-coordinate feature statistics from sampled batches, and
    fo-MAML runs its outer loop.  ``clock`` (a budget clock with a
    ``check()`` method) is polled inside the long-running loops.
    """
    spec.validate()
    name = spec.method.name
    cfg = spec.method
    arrays: dict[str, np.ndarray] = {}
    episodes_consumed = 0
    batches_consumed = 0

    if name == "fomaml":
        ep_spec = spec.train_episode_spec
        if ep_spec is None:
            raise ConfigError("fomaml meta-training needs train_episode_spec")
        inner = fm.InnerConfig(
            steps=cfg.get("inner_steps", 5), lr=cfg.get("inner_lr", 0.05)
        )
        outer = fm.OuterConfig(
            lr=cfg.get("outer_lr", 0.005),
            meta_batch=cfg.get("meta_batch", 32),
            epochs=cfg.get("epochs", 300),
        )
        params, _log = fm.meta_train(
            meta_train, ep_spec, inner, outer, seed=seed,
            hidden=cfg.get("hidden", 64), log_path=log_path, clock=clock,
        )
        arrays = {"W1": params.W1, "b1": params.b1,
                  "W2": params.W2, "b2": params.b2}
        episodes_consumed = outer.epochs * outer.meta_batch
    elif name == "linear":
        n_batches = cfg.get("pretrain_batches", 10)
        batch_size = min(cfg.get("batch_size", 256), meta_train.total_examples)
        root = RngState(int(seed)).fork(_PRETRAIN_STREAM)
        seen = []
        for i in range(n_batches):
            if clock is not None:
                clock.check()
            seen.append(sample_batch(meta_train, batch_size, root.fork(i)).x)
        stacked = np.concatenate(seen)
        std = stacked.std(axis=0)
        std[std < 1e-12] = 1.0
        arrays = {"feat_mean": stacked.mean(axis=0), "feat_std": std}
        batches_consumed = n_batches
    elif name == "sleeper":
        duration = cfg.get("duration_seconds", 10.0)
        t0 = time.monotonic()
        while time.monotonic() - t0 < duration:
            if clock is not None:
                clock.check()
            time.sleep(0.05)

    return LearnerState(
        method=spec.method,
        arrays=arrays,
        provenance=Provenance(
            seed=int(seed),
            episodes_consumed=episodes_consumed,
            batches_consumed=batches_consumed,
        ),
    )


# ---------------------------------------------------------------------------
# Artifact serialization


def render_learner(learner: LearnerState) -> str:
    """Versioned, lossless text form of a learner (bit-exact floats)."""
    out = [ARTIFACT_MAGIC, f"method,{learner.method.name}"]
    for key in sorted(learner.method.params):
        out.append(f"config,{key},{learner.method.params[key]!r}")
    p = learner.provenance
    out.append(f"provenance,{p.seed},{p.episodes_consumed},{p.batches_consumed}")
    for name in sorted(learner.arrays):
        arr = np.asarray(learner.arrays[name], dtype=np.float64)
        shape = "x".join(str(s) for s in arr.shape)
        out.append(f"array,{name},{shape}")
        rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
        for row in rows:
            out.append(",".join(render_value(v) for v in row))
    out.append("end")
    return "\n".join(out) + "\n"


def parse_learner(text: str) -> LearnerState:
    lines = text.splitlines()
    if not lines or lines[0] != ARTIFACT_MAGIC:
        raise ArtifactError(
            f"bad artifact magic: expected {ARTIFACT_MAGIC!r}, "
            f"got {lines[0][:32]!r}" if lines else "empty artifact"
        )
    if not lines[-1].strip() == "end":
        raise ArtifactError("artifact truncated: missing 'end' marker")

    method_name = None
    params: dict = {}
    provenance = None
    arrays: dict[str, np.ndarray] = {}
    i = 1
    body = lines[:-1]
    try:
        while i < len(body):
            line = body[i]
            if line.startswith("method,"):
                method_name = line.split(",", 1)[1]
            elif line.startswith("config,"):
                _, key, value = line.split(",", 2)
                params[key] = ast.literal_eval(value)
            elif line.startswith("provenance,"):
                _, s, e, b = line.split(",")
                provenance = Provenance(int(s), int(e), int(b))
            elif line.startswith("array,"):
                _, name, shape_s = line.split(",")
                shape = tuple(int(s) for s in shape_s.split("x"))
                n_rows = 1 if len(shape) == 1 else shape[0]
                data = []
                for j in range(n_rows):
                    data.append([float(v) for v in body[i + 1 + j].split(",")])
                arrays[name] = np.asarray(data, dtype=np.float64).reshape(shape)
                i += n_rows
            else:
                raise ArtifactError(f"unrecognized artifact line {line!r}")
            i += 1
    except (ValueError, IndexError, SyntaxError) as exc:
        raise ArtifactError(f"malformed artifact: {exc}") from None

    if method_name is None or provenance is None:
        raise ArtifactError("artifact missing method or provenance line")
    method = MethodConfig(name=method_name, params=params)
    method.validate()
    return LearnerState(method=method, arrays=arrays, provenance=provenance)


def save_learner(learner: LearnerState, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_learner(learner))


def load_learner(path: str) -> LearnerState:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ArtifactError(f"cannot read artifact: {exc}") from None
    return parse_learner(text)
