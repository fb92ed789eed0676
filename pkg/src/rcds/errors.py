"""Exception hierarchy.

Errors that a session can recover from by falling back to a full transfer
derive from :class:`RecoverableSyncError`.
"""


class RcdsError(Exception):
    pass


class EmptyHashArray(RcdsError, ValueError):
    """Input is shorter than the rolling-hash window."""


class ParamMismatch(RcdsError):
    pass


class FrameTooLarge(RcdsError):
    pass


class RecoverableSyncError(RcdsError):
    pass


class CatalogCollision(RecoverableSyncError):
    pass


class PreconditionViolated(RecoverableSyncError):
    pass


class PeelFailure(RecoverableSyncError):
    pass


class MaxRoundsExceeded(RecoverableSyncError):
    pass


class TraceNotFound(RecoverableSyncError):
    pass


class TraceExhausted(RecoverableSyncError):
    pass


class UnknownHash(RecoverableSyncError):
    pass


class VerifyMismatch(RecoverableSyncError):
    pass


class SyncFailed(RcdsError):
    """A session could not converge and fallback was not permitted."""
