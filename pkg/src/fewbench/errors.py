"""Exception hierarchy for the benchmark harness.

Every error raised by this package derives from :class:`BenchError`, so
callers can catch one type at the pipeline boundary.  The CLI maps the
leaf types onto distinct exit codes (see ``fewbench.cli``).
"""

from __future__ import annotations


class BenchError(Exception):
    """Base class for all errors raised by fewbench."""


class ConfigError(BenchError):
    """Invalid configuration: bad key, bad value, or inconsistent options."""


class ArgumentError(BenchError):
    """An operation was called with out-of-range or inconsistent arguments."""


class ParseError(BenchError):
    """A text input (dataset file, config, leaderboard) failed to parse.

    Carries the one-based line number when one is known.
    """

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class SamplingError(BenchError):
    """The pool cannot satisfy an episode or batch request."""


class EpisodeFormatError(BenchError):
    """A support/query set violates the N-way K-shot structure."""


class ShapeError(BenchError):
    """Array dimensions do not match what the operation requires."""


class NumericError(BenchError):
    """A numeric computation produced non-finite or degenerate values."""


class ConditioningError(NumericError):
    """A matrix was singular or near-singular; advises regularization."""


class DivergenceError(NumericError):
    """Iterative optimization produced a non-finite loss."""


class ArtifactError(BenchError):
    """A learner artifact is missing, truncated, or has a bad version tag."""


class ProtocolError(BenchError):
    """The evaluation protocol was violated (e.g. duplicate run seeds)."""


class EvaluationError(BenchError):
    """An episode failed during scoring; carries the episode index."""

    def __init__(self, message: str, episode_index: int | None = None):
        super().__init__(message)
        self.episode_index = episode_index


class ReportError(BenchError):
    """A leaderboard or score report file is corrupt."""


class BudgetExceededError(BenchError):
    """The wallclock budget ran out.

    ``completed`` optionally records how many units of work (e.g. scored
    episodes) finished before the clock expired.
    """

    def __init__(self, message: str, completed: int | None = None):
        super().__init__(message)
        self.completed = completed
