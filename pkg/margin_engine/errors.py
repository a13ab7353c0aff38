"""Exception types raised by margin_engine.

Every error derives from MarginEngineError so the CLI can map it to exit
code 1, and also from the builtin it refines so plain ``except ValueError``
callers keep working.
"""


class MarginEngineError(Exception):
    pass


class DimensionError(MarginEngineError, ValueError):
    pass


class NonFiniteError(MarginEngineError, ValueError):
    pass


class EmptyInputError(MarginEngineError, ValueError):
    pass


class InvalidConfigError(MarginEngineError, ValueError):
    pass


class InvalidRatioError(MarginEngineError, ValueError):
    """Raised when the margin ratio lambda is >= 1 (or the mean margin <= 0)."""


class DegenerateProfileError(MarginEngineError, ValueError):
    pass


class IdxFormatError(MarginEngineError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(MarginEngineError, RuntimeError):
    def __init__(self, epoch, batch, detail=""):
        message = f"non-finite loss at epoch {epoch}, batch {batch}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
