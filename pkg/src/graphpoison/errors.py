"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data
problems (missing/malformed/invalid graph files) exit 2, and runtime
divergence (non-finite numerics) exits 3.
"""


class GraphPoisonError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GraphPoisonError):
    """Bad configuration: invalid flag values, malformed config files."""


class GraphParseError(GraphPoisonError):
    """Malformed on-disk graph data; message names file and line."""


class GraphValidationError(GraphPoisonError):
    """Structurally invalid graph: dangling endpoints, self-loops, ..."""


class ShapeError(GraphPoisonError):
    """Incompatible operand shapes; message names both shapes."""


class NonFiniteError(GraphPoisonError):
    """A NaN/Inf appeared where finite values are required."""


class InvalidActionError(GraphPoisonError):
    """An environment action violated a state invariant; names the rule."""


class SamplingStuckError(GraphPoisonError):
    """A rejection sampler ran out of feasible candidates."""
