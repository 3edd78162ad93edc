from typing import Any, Optional


class CouplingLabError(Exception):
    """Base class for every error raised by the lab"""


class DomainError(CouplingLabError, ValueError):
    """Argument outside the operation's domain (t <= 0, mismatched spaces, ...)"""


class NonUniqueGeodesicError(CouplingLabError):
    """Pair lies on the cut locus; no unique minimal geodesic"""


class LimitError(CouplingLabError, ValueError):
    """Size guard tripped (gasket level, chain size)"""


class UnsupportedPointError(CouplingLabError):
    """Point is not representable for this operation (e.g. a non-vertex gasket point)"""


class UnsupportedError(CouplingLabError):
    """Operation not offered on this space"""


class NoReflectionError(CouplingLabError):
    """Starting pair admits no reflection structure; `witness` explains why"""

    def __init__(self, message: str, witness: Optional[Any] = None):
        super().__init__(message)
        self.witness = witness


class ParityError(CouplingLabError, ValueError):
    """Discretization would not place a required point on a state"""


class ConsistencyError(CouplingLabError):
    """An invariant asserted at construction time does not hold"""


class GridMismatchError(CouplingLabError, ValueError):
    """Two curves compared on different time grids"""


class ConfigError(CouplingLabError, ValueError):
    """Experiment configuration failed to parse or validate"""


class CapabilityError(CouplingLabError):
    """Unsupported combination of space, coupling and pipeline"""
