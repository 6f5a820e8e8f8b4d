"""Exception hierarchy shared by all fedqot modules."""


class FedQoTError(Exception):
    """Base class for every error raised by this package."""


class UsageError(FedQoTError, ValueError):
    """Caller passed arguments that violate an operation's preconditions."""


class SchemaError(FedQoTError, ValueError):
    """Shapes, layouts or feature schemas do not line up."""


class FormatError(FedQoTError, ValueError):
    """A byte blob or file does not follow its declared format."""


class CorruptionError(FormatError):
    """A well-formed blob carries non-finite parameter values."""


class ValidationError(FedQoTError, ValueError):
    """A domain value lies outside its allowed range."""


class IngestionError(FedQoTError, ValueError):
    """A CSV row could not be read. Carries the row number and field name."""

    def __init__(self, row, field, message):
        super().__init__(f"row {row}, field {field!r}: {message}")
        self.row = row
        self.field = field


class GenerationError(FedQoTError, RuntimeError):
    """Synthetic data generation could not meet its balance target."""


class AggregationError(FedQoTError, ValueError):
    pass


class TrainingDivergence(FedQoTError, RuntimeError):
    """Loss became non-finite during training."""


class ProtocolError(FedQoTError):
    """A peer violated the framing or the session state machine."""


class RoundFailure(FedQoTError, RuntimeError):
    """No ECN delivered an update before the round deadline, twice in a row."""
