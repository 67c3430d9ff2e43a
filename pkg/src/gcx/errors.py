"""Exception hierarchy for the exchange engine.

Every named rejection in the module contracts maps to one class here so
tests can assert on the exact failure mode.
"""


class GcxError(Exception):
    """Base class for all engine errors."""


# -- compute units ----------------------------------------------------------

class NonPositiveReference(GcxError):
    """Reference performance must be strictly positive."""


class NegativeHours(GcxError):
    """Operational hours cannot be negative."""


class Overflow(GcxError):
    """FLOPs product exceeds the 128-bit unsigned range."""


class ZeroBatch(GcxError):
    """Training batch size must be at least 1."""


class MissingDeadline(GcxError):
    """Rate calculation requires a deadline."""


# -- instruments ------------------------------------------------------------

class InvalidInstrument(GcxError):
    """Instrument specification violates a listing rule."""


class NotAnOption(GcxError):
    pass


class NotLong(GcxError):
    pass


class Expired(GcxError):
    pass


class NegativeInputs(GcxError):
    """Option pricing inputs must be non-negative."""


# -- matching ---------------------------------------------------------------

class UnknownInstrument(GcxError):
    pass


class BadTick(GcxError):
    """Order price is not a multiple of the instrument tick."""


class BadQuantity(GcxError):
    pass


class UnknownOrder(GcxError):
    pass


class GateRejected(GcxError):
    """Pre-trade risk gate rejected the order."""

    def __init__(self, reason: str, shortfall=None):
        super().__init__(reason)
        self.reason = reason
        self.shortfall = shortfall


# -- risk -------------------------------------------------------------------

class MissingMark(GcxError):
    pass


class MissingVol(GcxError):
    pass


class UnknownAccount(GcxError):
    pass


# -- clearing ---------------------------------------------------------------

class NoGuarantor(GcxError):
    pass


class NotExpired(GcxError):
    pass


class NotAFuture(GcxError):
    pass


class UnknownObligation(GcxError):
    pass


class DeadlinePassed(GcxError):
    pass


class BadState(GcxError):
    """Delivery obligation is not in a state that permits the operation."""


# -- token ledger -----------------------------------------------------------

class Insufficient(GcxError):
    pass


class LockedByObligations(GcxError):
    """Stake cannot drop below open slash exposure."""


class ExceedsStake(GcxError):
    pass


class CapExceeded(GcxError):
    """Issuance would push supply above the cap."""


# -- simulation harness -----------------------------------------------------

class ScenarioInvalid(GcxError):
    pass


class VersionMismatch(GcxError):
    pass


class CorruptLog(GcxError):
    pass
