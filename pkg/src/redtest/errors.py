"""Exception classes raised by redtest.

Every expected failure derives from :class:`RedTestError`, which the CLI maps
to exit code 1.
"""


class RedTestError(Exception):
    """Base class for all expected, user-facing errors."""


# tensor files
class TensorFormatError(RedTestError, ValueError):
    pass


class BadMagic(TensorFormatError):
    pass


class UnsupportedLayout(TensorFormatError):
    pass


class Truncated(TensorFormatError):
    pass


class NonFinite(TensorFormatError):
    pass


class IoFailure(RedTestError, OSError):
    pass


# traces
class EmptyTensor(RedTestError, ValueError):
    pass


class ManifestMismatch(RedTestError, ValueError):
    pass


class BadSpec(RedTestError, ValueError):
    pass


# similarity
class OrderMismatch(RedTestError, ValueError):
    pass


class TooFewSamples(RedTestError, ValueError):
    pass


class DegenerateRepresentation(RedTestError, ValueError):
    pass


# msrs / budget / fitting
class UnknownProfile(RedTestError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class RankDeficient(RedTestError, ValueError):
    pass


# pruning
class TooFewLayers(RedTestError, ValueError):
    pass


class MissingCost(RedTestError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# nas ranking
class NonPositiveBase(RedTestError, ValueError):
    pass


class MissingField(RedTestError, ValueError):
    pass


class EmptyCandidateSet(RedTestError, ValueError):
    pass
