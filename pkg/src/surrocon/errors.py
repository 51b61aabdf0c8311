"""Exception taxonomy shared across the package.

Config/usage problems map to CLI exit code 2, numerical runtime failures
(non-finite values, empty losses) to exit code 3.
"""


class SurroconError(Exception):
    """Base class for all package errors."""


class DimensionError(SurroconError):
    """Shapes or sizes that do not line up."""


class NonFiniteError(SurroconError):
    """An operation produced (or was handed) NaN/Inf."""


class DegenerateInputError(SurroconError):
    """Input is numerically degenerate (e.g. a near-zero row fed to a normalizer)."""


class ParameterError(SurroconError):
    """A parameter value outside its documented range."""


class ContractError(SurroconError):
    """A documented precondition was violated."""


class EmptyLossError(SurroconError):
    """No anchor contributed to a contrastive loss."""


class ParseError(SurroconError):
    """Malformed manifest or config text."""


class IntegrityError(SurroconError):
    """Manifest and sidecar disagree (lengths, offsets, truncation)."""


class ShortageError(SurroconError):
    """Not enough samples of a class to satisfy a balanced draw."""


class UndefinedMetricError(SurroconError):
    """Metric denominator empty (single-class input, zero counts)."""


class DivergenceUndefinedError(SurroconError):
    """KL divergence undefined: p puts mass where q has none."""


class ConfigError(SurroconError):
    """Bad key or value in a run config file."""
