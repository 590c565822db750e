"""Exception hierarchy shared by the engine and the CLI."""


class ClinEventError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigError(ClinEventError):
    """Invalid configuration file, key or value."""

    exit_code = 3


class CorpusError(ClinEventError):
    """Invalid document, standoff markup, span or attribute value."""

    exit_code = 4


class ModelFormatError(ClinEventError):
    """Unreadable or inconsistent model container."""

    exit_code = 4


class ShapeError(ClinEventError):
    """Array shapes that violate a network precondition."""

    exit_code = 4


class TrainingError(ClinEventError):
    """Invalid training data or training parameters."""

    exit_code = 4


class PipelineError(ClinEventError):
    """Extraction requested for a task without a model."""

    exit_code = 4


class EvaluationError(ClinEventError):
    """System and gold sides that cannot be compared."""

    exit_code = 4
