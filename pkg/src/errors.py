"""Exception hierarchy shared by the simulator, the networks and the CLI."""
from typing import Optional


class QnnScrError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(QnnScrError, ValueError):
    """An argument is out of its documented domain."""


class CapacityError(QnnScrError):
    """A simulation would exceed the qubit or density-matrix budget."""


class NumericError(QnnScrError, ArithmeticError):
    """A loss or gradient became non-finite.

    `index` points at the offending parameter for shifted gradient evaluations;
    `epoch` and `batch` locate the failure inside a training run.
    """

    def __init__(
        self,
        message: str,
        index: Optional[int] = None,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
    ):
        super().__init__(message)
        self.index = index
        self.epoch = epoch
        self.batch = batch


class StateError(QnnScrError):
    """An operation was called out of order (e.g. backward before forward)."""


class FormatError(QnnScrError):
    """A file on disk could not be decoded."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{message} ({path})" if path else message)
        self.path = path


class DatasetError(QnnScrError):
    """The dataset directory does not have the expected layout."""
