"""Exception classes for the skeleton search engine."""

from typing import Optional


class AutoMRError(Exception):
    """Base exception for the skeleton search engine."""

    def __init__(self, message: str, details: Optional[str] = None) -> None:
        self.message = message
        self.details = details
        super().__init__(self.message)


class ConfigurationError(AutoMRError):
    """Raised when configuration is invalid or missing."""
    pass


class SkeletonError(AutoMRError):
    """Raised when a skeleton cannot be built or is invalid for an operation."""
    pass


class CatalogError(AutoMRError):
    """Raised when a prompt catalog is malformed or asked for an impossible prompt."""
    pass


class PolicyError(AutoMRError):
    """Raised on dimension mismatches or non-finite policy outputs."""
    pass


class CheckpointError(AutoMRError):
    """Raised when a checkpoint cannot be decoded."""
    pass


class BackendError(AutoMRError):
    """Raised when a reasoning backend fails."""

    def __init__(
        self,
        message: str,
        details: Optional[str] = None,
        node_index: Optional[int] = None,
    ) -> None:
        self.node_index = node_index
        if node_index is not None:
            message = f"node {node_index}: {message}"
        super().__init__(message, details)


class SamplerError(AutoMRError):
    """Raised when skeleton sampling or replay cannot proceed."""
    pass


class SearchError(AutoMRError):
    """Raised when a search batch or training run aborts."""
    pass


class DatasetError(AutoMRError):
    """Raised when dataset files are missing or malformed."""
    pass
