"""Exception and warning types shared across the triage pipeline."""


class TriageError(Exception):
    """Base class for all package errors."""


# --- volume / file I/O ---

class UnreadableFile(TriageError):
    """File missing, truncated, or not a supported volumetric format."""


class MissingSpacing(UnreadableFile):
    """Volumetric file carries no usable voxel-spacing metadata."""


class NonVolumetric(UnreadableFile):
    """Input has fewer than 3 dimensions."""


class IOFailure(TriageError):
    pass


# --- geometry / masks ---

class EmptyMask(TriageError):
    """A mask that must contain foreground voxels is all zeros."""


class ShapeMismatch(TriageError):
    pass


class Misalignment(ShapeMismatch):
    """Mask and volume do not share shape/spacing."""


class DegenerateOutput(TriageError):
    """Resampling would produce an unusably small image."""


# --- networks / weights ---

class InvalidSpec(TriageError):
    pass


class VersionMismatch(TriageError):
    pass


class KeyMismatch(TriageError):
    """Stored parameter names/shapes do not match the target network."""


class EmptyInput(TriageError):
    pass


# --- training ---

class NoTargets(TriageError):
    """A loss was requested for a batch with neither masks nor labels."""


class Divergence(TriageError):
    """Training loss became non-finite."""


class InfeasibleSpec(TriageError):
    pass


# --- metrics ---

class DegenerateSample(TriageError):
    """A metric subsample has an empty class."""


class ConstantVector(TriageError):
    pass


# --- triage / service ---

class OutOfRange(TriageError):
    pass


class UnknownStudy(TriageError):
    pass


class NotScored(TriageError):
    pass


class SliceOutOfRange(TriageError):
    pass


# --- soft conditions (warnings, never fatal) ---

class EmptyMaskWarning(UserWarning):
    """Empty lung mask: downstream falls back to the full-volume box."""


class DegenerateSplitWarning(UserWarning):
    """One k-means cluster received under 1% of the lung voxels."""


class HuRangeWarning(UserWarning):
    """Loaded intensities fall outside the plausible [-1024, 3071] HU range."""


class ZeroVolumeLungWarning(UserWarning):
    """A lung with zero voxels contributes severity fraction 0."""


class EmptyDiceWarning(UserWarning):
    """Dice of two empty masks reported as 1.0 by convention."""


class UnbalancedDatasetWarning(UserWarning):
    """Balanced sampling requested but one stratum is empty; plain shuffling used."""
