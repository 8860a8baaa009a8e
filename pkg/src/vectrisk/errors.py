"""Exception hierarchy shared by all vectrisk modules.

Two failure families matter to callers: bad inputs (rejected before any
numerics run) and numerical breakdowns (degenerate problems, divergence,
non-convergence that cannot be repaired).  The CLI maps them to exit
codes 1 and 2 respectively.
"""


class VectriskError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(VectriskError):
    """Input data, metadata, or configuration violates a precondition."""


class NumericalError(VectriskError):
    """A numerical procedure failed on otherwise valid inputs."""
