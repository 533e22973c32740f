"""Exception hierarchy shared across the package."""


class FuseRankError(Exception):
    """Base class for all domain errors."""


class ZeroVector(FuseRankError):
    """A vector that must be normalizable is (numerically) all zeros."""

    def __init__(self, row: int | None = None, message: str | None = None):
        self.row = row
        if message is None:
            message = "zero vector" if row is None else f"zero vector at row {row}"
        super().__init__(message)


class DimMismatch(FuseRankError):
    """Operands have incompatible dimensionality."""


class EmptyIndex(FuseRankError):
    """Search was attempted against an index with no rows."""


class InvalidCount(FuseRankError):
    """A count argument that must be positive is zero or negative."""


class MissingModality(FuseRankError):
    """A mask-enabled modality has no vector available."""


class NoEmbedding(FuseRankError):
    """An id has no embedding row in the relevant matrix."""


class NoPositive(FuseRankError):
    """A query has no positively judged document."""


class NoRelevant(FuseRankError):
    """A query has no relevant document; it cannot be scored."""


class MalformedRun(FuseRankError):
    """A run file violates rank/score/uniqueness structure."""


class NonFiniteLoss(FuseRankError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


class FormatError(FuseRankError):
    """A file does not conform to its declared on-disk format."""
