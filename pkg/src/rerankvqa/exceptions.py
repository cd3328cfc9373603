"""Exception hierarchy shared by every pipeline stage."""


class RerankVQAError(Exception):
    """Base class for all package errors."""


class ShapeError(RerankVQAError, ValueError):
    """Array dimensions do not agree."""


class ValidationError(RerankVQAError, ValueError):
    """Input values violate a documented invariant (non-finite, out of range, ...)."""


class BackendError(RerankVQAError, RuntimeError):
    """A model backend failed.

    ``retriable`` tells the orchestrator whether calling again may succeed.
    """

    def __init__(self, message, backend_id="unknown", retriable=True):
        super().__init__(f"[{backend_id}] {message}")
        self.backend_id = backend_id
        self.retriable = retriable


class EmptyCaptionError(RerankVQAError):
    """No usable caption survived generation and filtering."""


class CompositionError(RerankVQAError, ValueError):
    """A prompt was requested without a component its content variant needs."""

    def __init__(self, slot):
        super().__init__(f"prompt content requires missing component: {slot}")
        self.slot = slot


class IngestionError(RerankVQAError, ValueError):
    """A dataset file does not match its published schema."""

    def __init__(self, message, record_id=None):
        if record_id is not None:
            message = f"record {record_id!r}: {message}"
        super().__init__(message)
        self.record_id = record_id


class AggregationError(RerankVQAError, ValueError):
    pass


class ConfigError(RerankVQAError, ValueError):
    pass
