"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
GeometryError (incl. DivisibilityError) -> 3, CheckpointError -> 4.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class GeometryError(ValueError):
    """A model/pyramid configuration cannot be built for the given extents."""


class DivisibilityError(GeometryError):
    """An axis extent is not divisible by the requested part count."""

    def __init__(self, extent, n, axis=None, level=None):
        self.extent = extent
        self.n = n
        self.axis = axis
        self.level = level
        msg = f"extent {extent} not divisible into {n} parts"
        if axis is not None:
            msg += f" along axis {axis}"
        if level is not None:
            msg += f" (pyramid level {level})"
        super().__init__(msg)


class TapeError(RuntimeError):
    """Misuse of the gradient tape (non-scalar loss, re-run, detached)."""


class ConfigError(ValueError):
    """Unknown or malformed run-configuration key/value."""


class CheckpointError(ValueError):
    """Checkpoint missing, malformed, or incompatible with the model."""


class MiningError(ValueError):
    """A batch identity has too few samples for hard-example mining."""

    def __init__(self, identity):
        self.identity = identity
        super().__init__(
            f"identity {identity} has a single sample; "
            "hard mining needs at least one positive per anchor"
        )


class DegenerateVectorError(ValueError):
    """A zero-norm embedding was passed to the cosine metric."""
