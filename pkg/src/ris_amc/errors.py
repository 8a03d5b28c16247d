"""Exception types shared across the pipeline."""


class RisAmcError(Exception):
    """Base class for all package errors."""


class IndivisibleBitCount(RisAmcError, ValueError):
    pass


class EmptyInput(RisAmcError, ValueError):
    pass


class InvalidSplit(RisAmcError, ValueError):
    pass


class IndexOutOfRange(RisAmcError, IndexError):
    pass


class ShapeMismatch(RisAmcError, ValueError):
    pass


class NonFiniteActivation(RisAmcError, FloatingPointError):
    pass


class NonFiniteLoss(RisAmcError, FloatingPointError):
    """Training loss became NaN/Inf; ``batch_index`` is the global iteration."""

    def __init__(self, batch_index, epoch=None):
        self.batch_index = batch_index
        self.epoch = epoch
        super().__init__(f"non-finite loss at batch {batch_index} (epoch {epoch})")


class EmptySet(RisAmcError, ValueError):
    pass


class SubsetTooLarge(RisAmcError, ValueError):
    pass


class FormatError(RisAmcError, ValueError):
    """Bad magic number, unsupported version or malformed header."""


class TruncatedRecord(FormatError):
    def __init__(self, record_index):
        self.record_index = record_index
        super().__init__(f"truncated record {record_index}")


class ManifestMismatch(FormatError):
    pass
