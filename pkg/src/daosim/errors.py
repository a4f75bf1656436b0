"""Exception hierarchy shared by every layer."""


class DaosimError(Exception):
    """Base class for engine errors."""


# storage
class ChecksumMismatch(DaosimError):
    pass


class BadExtent(DaosimError):
    pass


class BadKey(DaosimError):
    pass


# pools / containers / transactions
class UnknownPool(DaosimError):
    pass


class NameExists(DaosimError):
    pass


class UnknownContainer(DaosimError):
    pass


class StaleHandle(DaosimError):
    pass


class ReadOnlyHandle(DaosimError):
    pass


class DuplicateTransaction(DaosimError):
    pass


class TxNotOpen(DaosimError):
    pass


class VersionNotCommitted(DaosimError):
    pass


class NotPersisted(DaosimError):
    pass


class ImageCorrupt(DaosimError):
    """A container image failed its structural or CRC checks."""


# cluster
class UnknownClass(DaosimError):
    pass


class AllReplicasFailed(DaosimError):
    pass


# hierarchical / array layers
class NotFound(DaosimError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class BadLayout(DaosimError):
    pass


class OutOfBounds(DaosimError):
    pass


class SizeMismatch(DaosimError):
    pass


class TooLarge(DaosimError):
    pass


class LinkCycle(DaosimError):
    pass


class UnknownDimension(DaosimError):
    pass


class UnlimitedNotSlowest(DaosimError):
    pass


class CollectiveRequired(DaosimError):
    """Unlimited-dimension growth attempted outside an explicit transaction."""


# benchmark harness
class ConfigError(DaosimError, ValueError):
    pass


class VerificationFailed(DaosimError):
    pass
