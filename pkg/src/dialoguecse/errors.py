"""Exception taxonomy shared across the package.

Two broad families matter to callers (and to the CLI's exit codes):
``DataError`` for problems with inputs on disk or degenerate datasets,
``NumericalError`` for contract violations and failures inside the
numerical core.
"""


class DialogueCseError(Exception):
    """Base class for all package-specific errors."""


class DataError(DialogueCseError):
    """Bad or degenerate input data (corpus files, eval files, vocab)."""


class CorpusFormatError(DataError):
    """Malformed corpus or eval file; message names the offending line."""


class VocabMismatchError(DataError):
    """Checkpoint vocabulary does not match the requested operation."""


class ConstantInputError(DataError):
    """Correlation is undefined because one input sequence is constant."""


class NumericalError(DialogueCseError):
    """Failure inside the numerical core."""


class ShapeError(NumericalError):
    """Operand shapes are incompatible; message names both shapes."""


class EmptyPoolError(NumericalError):
    """A pooling mask selected zero rows."""


class DegenerateVectorError(NumericalError):
    """A zero-norm vector reached an operation that requires norm > 0."""


class NonFiniteLossError(NumericalError):
    """Training produced a NaN/Inf loss; message names the step."""


class GradCheckError(NumericalError):
    """Gradient checking aborted (e.g. the probed function is non-finite)."""
