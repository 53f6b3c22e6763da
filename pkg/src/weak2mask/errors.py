"""Exception hierarchy shared by every stage of the pipeline."""
from __future__ import annotations


class Weak2MaskError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(Weak2MaskError):
    pass


class AnnotationError(Weak2MaskError, ValueError):
    """A dataset file is missing, malformed, or violates its invariants."""

    def __init__(self, message: str, image_id: str | None = None):
        self.image_id = image_id
        if image_id is not None:
            message = f"{image_id}: {message}"
        super().__init__(message)


class PreconditionError(Weak2MaskError, ValueError):
    pass


class BackendError(Weak2MaskError):
    """Raised by segmenter and classifier backends.

    ``code`` is one of ``backend_unavailable``, ``image_not_found``,
    ``malformed_response``, ``classifier_unavailable`` or ``backend_failure``.
    """

    def __init__(self, message: str, code: str = "backend_failure", step: int | None = None):
        self.code = code
        self.step = step
        super().__init__(message)


class BackendUnavailable(BackendError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message, code="backend_unavailable", step=step)


class MalformedResponse(BackendError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message, code="malformed_response", step=step)


class ImageNotFound(BackendError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message, code="image_not_found", step=step)


class ClassifierUnavailable(BackendError):
    def __init__(self, message: str):
        super().__init__(message, code="classifier_unavailable")
