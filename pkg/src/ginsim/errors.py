"""Exception hierarchy shared by every layer of the simulator."""


class GinError(Exception):
    """Base class for all ginsim errors."""


# core
class InvalidDescriptor(GinError):
    pass


class MalformedDescriptor(GinError):
    pass


class OutOfBounds(GinError):
    pass


class UnknownWindow(GinError):
    pass


class RankOutOfRange(GinError):
    pass


# fabric
class DuplicateEndpoint(GinError):
    pass


class UnknownChannel(GinError):
    pass


class FabricFailure(GinError):
    """The run was aborted; raised in every agent blocked on the fabric."""


class Deadlock(FabricFailure):
    """Every agent is blocked and no event is pending."""


# plugin / backends
class UnknownHandle(GinError):
    pass


class BackendMismatch(GinError):
    pass


class InvalidContext(GinError):
    pass


# runtime
class ConfigMismatch(GinError):
    pass


class BootstrapTimeout(GinError):
    pass


class RegistrationMismatch(GinError):
    pass


class InvalidPeer(GinError):
    pass


class InvalidSignal(GinError):
    pass


class InvalidCounter(GinError):
    pass


class ResetWhileOutstanding(GinError):
    pass


class GinTimeout(GinError):
    pass


# harness
class VerificationFailure(GinError):
    pass


class FlowControlViolation(VerificationFailure):
    pass


class ChildFailure(GinError):
    pass


class UsageError(GinError):
    pass
