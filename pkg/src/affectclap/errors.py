"""Exception types shared across the package.

Validation errors (bad inputs, mismatched configs) and runtime errors
(numerical blowups) both derive from AffectClapError; the CLI maps the
former to exit code 1 and the latter to exit code 2.
"""


class AffectClapError(Exception):
    """Base class for all package errors."""


# -- audio decoding / DSP -------------------------------------------------

class UnsupportedFormat(AffectClapError):
    """WAV file is malformed or uses a codec other than PCM16/float32."""


class EmptyAudio(AffectClapError):
    """WAV file decodes to zero frames."""


class ClipTooShort(AffectClapError):
    """Clip is shorter than a single analysis frame."""


class MismatchedTracks(AffectClapError):
    """Frame tracks disagree in frame count or hop."""


# -- prompting -------------------------------------------------------------

class MissingPitch(AffectClapError):
    """Pitch prompt requested for a clip with no voiced frames."""


# -- featurizers -----------------------------------------------------------

class EmptyText(AffectClapError):
    """Text is empty after normalization."""


# -- contrastive core ------------------------------------------------------

class DimensionMismatch(AffectClapError):
    """Batch dimensions do not match the model configuration."""


class DegenerateEmbedding(AffectClapError):
    """Projected vector has near-zero norm and cannot be normalized."""


class NonFiniteLogits(AffectClapError):
    """Similarity matrix contains NaN or infinity."""


class InsufficientPairs(AffectClapError):
    """Fewer training pairs than one batch."""


class NonFiniteLoss(AffectClapError):
    """Training loss became NaN or infinite; run aborted."""


class VersionMismatch(AffectClapError):
    """Checkpoint format string is not recognized."""


class CorruptCheckpoint(AffectClapError):
    """Checkpoint file cannot be parsed into a model."""


class FeaturizerMismatch(AffectClapError):
    """Checkpoint was produced under a different featurizer configuration."""


# -- evaluation ------------------------------------------------------------

class EmptyCandidates(AffectClapError):
    """Zero-shot classification needs at least one candidate label."""


class UnknownDataset(AffectClapError):
    """Requested dataset name is absent from the provided manifests."""


class LeakageDetected(AffectClapError):
    """A held-out clip id appeared in the training pairs."""


class InsufficientData(AffectClapError):
    """Fewer training samples than classes."""


class EmptyCorpus(AffectClapError):
    """Retrieval corpus contains no clips."""


class MissingGroundTruth(AffectClapError):
    """A retrieved clip has no ground-truth record."""


# -- corpus / reporting ----------------------------------------------------

class MalformedLine(AffectClapError):
    """Manifest line is not valid JSON or has an invalid field value."""


class MissingField(AffectClapError):
    """Manifest line lacks a required field."""


class DuplicateClipId(AffectClapError):
    """The same clip id appears twice in a manifest set."""


class SchemaMismatch(AffectClapError):
    """Report file does not match the expected report schema."""
