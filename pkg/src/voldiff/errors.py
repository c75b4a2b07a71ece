"""Exception types shared across the package."""


class VoldiffError(Exception):
    """Base class for all voldiff errors."""


class DimMismatch(VoldiffError):
    """Operands have incompatible grid dimensions."""


class EmptyMask(VoldiffError):
    """A mask that must select at least one voxel selects none."""


class EmptyInput(VoldiffError):
    """An operation received an empty collection."""


class IndexOutOfRange(VoldiffError):
    """A slice or voxel index lies outside the volume."""


class InvalidSlabWidth(VoldiffError):
    """Slab widths must be odd positive integers."""


class InvalidParam(VoldiffError):
    """A scalar parameter violates its documented range."""


class FormatError(VoldiffError):
    """A serialized volume is corrupt or malformed."""


class NumericallySingular(VoldiffError):
    """A conversion would divide by a vanishing schedule coefficient."""


class InvalidSpec(VoldiffError):
    """A phantom recipe describes degenerate geometry."""


class NoValidLesions(VoldiffError):
    """Every lesion component was skipped during CNR evaluation."""


class TrainingDiverged(VoldiffError):
    """Training loss became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step
