"""Exception hierarchy shared across the pipeline.

Every error carries a short machine-parseable ``category`` that the CLI
prints as ``<category>: <message>`` before exiting nonzero.
"""


class VtmatchError(Exception):
    category = "error"


class ShapeError(VtmatchError):
    """Tensor dimensions do not satisfy an operation's contract."""

    category = "shape-error"


class NumericError(VtmatchError):
    """A computation produced NaN/Inf or an unusable conditioning."""

    category = "numeric-error"


class TrainingDivergedError(NumericError):
    category = "training-diverged"


class InvalidGraspError(VtmatchError):
    """Tactile render requested for a grasp that fails the success rule."""

    category = "invalid-grasp"


class DegenerateObjectError(VtmatchError):
    """No successful grasp found within the attempt cap."""

    category = "degenerate-object"


class UnderPopulatedObjectError(VtmatchError):
    """An object has too few episodes for pair construction."""

    category = "under-populated-object"


class ConfigError(VtmatchError):
    category = "config-error"


class MissingPrerequisiteError(VtmatchError):
    """A command was run before the files it consumes exist."""

    category = "missing-prerequisite"


class StoreFormatError(VtmatchError):
    """An on-disk artifact does not parse as the expected format."""

    category = "store-format"
