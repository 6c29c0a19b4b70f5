"""Exception types shared across the pipeline.

Parameter-validation failures (bad ranges, k >= n, nonpositive targets)
raise plain ValueError; the classes below mark data- and state-level
failures that callers may want to catch selectively.
"""


class HerdweightError(Exception):
    """Base class for pipeline errors."""


class DepthFormatError(HerdweightError):
    """Malformed depth CSV text (ragged rows, non-numeric cells, no rows)."""


class CalibrationError(HerdweightError):
    """Frame dimensions do not match the camera profile."""


class ContractError(HerdweightError):
    """Input violates an operation's stage/shape contract."""


class EmptyCloudError(HerdweightError):
    """A cleaning step removed every point of a cloud."""


class DegenerateCloudError(HerdweightError):
    """All points coincide; the cloud cannot be normalized."""


class ShapeError(HerdweightError):
    """Tensor operands have incompatible shapes."""


class UninitializedStatsError(HerdweightError):
    """Eval-mode batch norm requested before any training statistics exist."""


class DivergedError(HerdweightError):
    """Training produced a non-finite loss or gradient."""


class CheckpointError(HerdweightError):
    """Checkpoint file is unreadable or incompatible with the target model."""


class ManifestError(HerdweightError):
    """Dataset manifest is malformed or references unknown records."""


class PartitionError(HerdweightError):
    """A cow-level split would leave some partition empty."""


class PlanError(HerdweightError):
    """Experiment plan file is malformed or incomplete."""


class GenerationError(HerdweightError):
    """Synthetic scene cannot be rendered under the given camera."""


class SearchFailureError(HerdweightError):
    """Every candidate of a hyperparameter search diverged."""
