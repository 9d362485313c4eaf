"""Exception taxonomy shared across the package.

Two families: :class:`DataError` for malformed or inconsistent inputs and
:class:`NumericalError` for violated numeric preconditions or non-finite
results. The CLI maps DataError to exit code 3 and NumericalError to exit
code 4; usage problems exit 2.
"""


class ProfpredError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ProfpredError):
    """Malformed, inconsistent, or out-of-contract input data."""


class NumericalError(ProfpredError):
    """Numeric precondition violated or non-finite value encountered."""


# --- alignment parsing / validation ---

class MalformedRecordError(DataError):
    """Input record does not parse as the declared format."""


class EmptyAlignmentError(DataError):
    """Alignment has no rows or no columns."""


class IllegalCharacterError(DataError):
    """A sequence cell holds a character outside the accepted alphabet."""

    def __init__(self, char: str, row_id: str, column: int):
        self.char = char
        self.row_id = row_id
        self.column = column  # 1-based
        super().__init__(
            f"illegal character {char!r} in row {row_id!r} at column {column}"
        )


class IndexOutOfRangeError(DataError):
    """1-based index outside its valid range."""


# --- profile construction ---

class NoMatchColumnsError(DataError):
    """Column classification produced zero match columns."""


class MissingAnnotationError(DataError):
    """Reference-annotation policy requested but the alignment has none."""


class NegativePseudocountError(NumericalError):
    """Pseudocount must be >= 0."""


# --- label construction ---

class EmptyRowError(DataError):
    """Alignment row holds no residues after removing gaps."""


class ProfileMismatchError(DataError):
    """Profile is inconsistent with the column classes it is applied to."""


# --- losses ---

class NonPositivePredictionError(NumericalError):
    """Predicted distribution has an entry <= 0 where positivity is required."""


class NotNormalizedError(NumericalError):
    """Probability vector does not sum to 1 within tolerance."""


class ShapeMismatchError(DataError):
    """Array shapes do not agree."""


class EmptyMaskError(DataError):
    """Masked-token loss requested with an empty mask set."""


class NonPositiveLossError(NumericalError):
    """Running loss must be > 0 to calibrate the mixing weight."""


# --- model ---

class InvalidConfigError(DataError):
    """Model configuration violates its own invariants."""


class TokenOutOfRangeError(DataError):
    """Token id outside the vocabulary."""


class LengthExceededError(DataError):
    """Sequence longer than the model's position table."""


# --- training ---

class NonFiniteGradientError(NumericalError):
    """A gradient tensor contains NaN or Inf."""

    def __init__(self, tensor_name: str):
        self.tensor_name = tensor_name
        super().__init__(f"non-finite gradient in tensor {tensor_name!r}")


class RecordTooLongError(DataError):
    """A single record exceeds the batch token budget."""


# --- synthetic generation ---

class InvalidConcentrationError(NumericalError):
    """Dirichlet concentration must be > 0."""


class DegenerateFamilyError(DataError):
    """Family sampling kept producing residue-free rows."""


class InsufficientFamiliesError(DataError):
    """Task construction needs more families than were supplied."""


# --- downstream evaluation ---

class ConfigMismatchError(DataError):
    """Checkpoint configuration incompatible with the requested run."""


class EmptySplitError(DataError):
    """A train or test split came out empty."""


class LengthMismatchError(DataError):
    """Paired vectors have different lengths."""


class DegenerateInputError(DataError):
    """Statistic undefined for this input (e.g. constant vector)."""


class NoCandidatePairsError(DataError):
    """No residue pairs satisfy the contact candidate filter."""
