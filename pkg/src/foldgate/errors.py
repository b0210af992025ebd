"""Exception hierarchy.

Everything raised on bad input derives from :class:`FoldgateError`; the CLI
maps those to exit code 2 and plain ``OSError`` to exit code 1.
"""


class FoldgateError(Exception):
    """Base class for validation failures."""


class NiftiError(FoldgateError, ValueError):
    """Malformed or unsupported NIfTI-1 file."""


class ManifestError(FoldgateError, ValueError):
    """Malformed case manifest."""


class MissingFileError(ManifestError):
    """A manifest references a file that does not exist."""

    def __init__(self, path, role):
        self.path = path
        self.role = role
        super().__init__(f"{role}: file not found: {path}")


class GeometryMismatchError(FoldgateError, ValueError):
    """Volumes that must share a voxel grid do not."""

    def __init__(self, message, fold=None):
        self.fold = fold
        super().__init__(message)


class PolicyError(FoldgateError, ValueError):
    """Malformed threshold policy or a policy that does not fit the case."""


class MissingReferenceError(FoldgateError, ValueError):
    """Evaluation requested for a case without a reference mask."""
