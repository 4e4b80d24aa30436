"""Exception types shared across the toolkit."""


class FaceRefError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(FaceRefError, ValueError):
    """An argument violates a documented precondition."""


class NoFaceError(FaceRefError):
    """The plugged detector found no face in the image."""


class EmptySubsetError(FaceRefError):
    """A pose-pool subset is empty and cannot be sampled."""


class MissingGroupError(FaceRefError):
    """A checkpoint archive lacks a requested parameter group."""


class NonFiniteLossError(FaceRefError):
    """Training produced a NaN or infinite loss."""


class ManifestError(FaceRefError, ValueError):
    """A dataset manifest violates its schema or invariants."""
