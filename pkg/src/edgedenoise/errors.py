"""Exception types shared across the toolkit.

Every failure mode that callers are expected to handle gets its own class
rooted at PipelineError so the CLI can map the whole family to one exit
code. Internal invariant violations deliberately sit outside that family.
"""


class PipelineError(Exception):
    """Base class for recoverable data / configuration errors (CLI exit 2)."""


class UnsupportedFormatError(PipelineError):
    """WAV file is structurally valid but not 16-bit mono PCM."""


class CorruptHeaderError(PipelineError):
    """File is not a parseable RIFF/WAVE container."""


class TooShortError(PipelineError):
    """Signal is shorter than the operation's minimum length."""


class NonColaConfigError(PipelineError):
    """Window/hop combination leaves gaps, so overlap-add cannot invert."""


class InvalidRateError(PipelineError):
    """Sample rate is zero, negative, or otherwise unusable."""


class LengthMismatchError(PipelineError):
    """Two signals that must be equal length are not."""


class InvalidLadderError(PipelineError):
    """SNR ladder parameters are empty or inverted."""


class SilentSourceError(PipelineError):
    """A clean or noise source has zero energy and cannot be mixed."""


class ZeroNoiseError(PipelineError):
    """Noise component has zero energy; the SNR ratio is unbounded (+inf)."""


class RateMismatchError(PipelineError):
    """Clips that must share a sample rate do not."""


class EmptyCorpusError(PipelineError):
    """A directory expected to hold WAV clips has none."""


class ManifestFormatError(PipelineError):
    """Manifest file is missing, malformed, or schema-incompatible."""


class ShapeMismatchError(PipelineError):
    """Tensor shape does not match what the layer/model declares."""


class InvalidConfigError(PipelineError):
    """Model, loss, or optimizer configuration is inconsistent."""


class EmptyDatasetError(PipelineError):
    """Training requested on a dataset with zero pairs."""


class NonFiniteError(PipelineError):
    """NaN or infinity appeared where only finite values are allowed."""


class AccumulatorOverflowError(PipelineError):
    """Integer MAC accumulation could exceed the 32-bit range."""


class SilentTargetError(PipelineError):
    """Reference signal for a metric has zero energy."""


class EmptyInputError(PipelineError):
    """An operation received an empty array where samples are required."""


class ArchitectureMismatchError(PipelineError):
    """Checkpoint tensors do not match the configured architecture."""


class InternalInvariantError(Exception):
    """A bug: an internal consistency check failed (CLI exit 3)."""


class StaleCacheError(InternalInvariantError):
    """Backward pass invoked with a forward cache from different parameters."""
