"""Exception hierarchy shared across the package."""


class PrfError(Exception):
    """Base class for all package-specific errors."""


# --- prompt templating ---

class MissingSlotError(PrfError):
    """A template slot has no binding."""


class UnknownSlotError(PrfError):
    """A binding names a slot the template does not declare."""


# --- imaging ---

class BadMagicError(PrfError):
    """File does not start with the expected magic bytes."""


class BadHeaderError(PrfError):
    """Header fields are malformed or out of range."""


class TruncatedPixelsError(PrfError):
    """Pixel payload is shorter than the header promises."""


class NoBoxError(PrfError):
    """No 4-number bounding box found in the text."""


class DegenerateBoxError(PrfError):
    """Bounding box has zero area after clamping."""


# --- embedder / model backends ---

class EmptyInputError(PrfError):
    """Text to embed is empty after trimming."""


class RemoteUnavailableError(PrfError):
    """Remote service did not produce a usable response within the retry budget."""


class NoScriptMatchError(PrfError):
    """No scripted rule matches the request; the fixture is incomplete."""


# --- knowledge base / index ---

class DuplicateIdError(PrfError):
    """An identifier appears more than once."""


class DimensionMismatchError(PrfError):
    """Vector dimension differs from the configured dimension."""


class EmptyIndexError(PrfError):
    """An index cannot be built from zero vectors."""


class NotFoundError(PrfError, KeyError):
    """Keyed lookup found nothing."""


class VersionMismatchError(PrfError):
    """Persisted file uses an unsupported format version."""


class ChecksumMismatchError(PrfError):
    """Persisted file failed integrity verification."""


# --- reward math ---

class GroupTooSmallError(PrfError):
    """Advantage standardization needs at least two responses."""


class LengthMismatchError(PrfError):
    """Per-token log-probability lists disagree in length."""


# --- evaluation ---

class MissingGroundTruthError(PrfError):
    """A trace lacks the ground truth required by the metric."""
