class QBlueError(Exception):
    """Base class for every error raised by qblue."""


class QuantizerSpecError(QBlueError):
    """Invalid quantizer description: interval, bit count, transitions or file rows."""


class InlMonotonicityError(QBlueError):
    """INL perturbation kept breaking transition ordering after the retry budget."""


class ProbabilityDomainError(QBlueError, ValueError):
    """Probability outside the open interval (0, 1)."""


class CodeRangeError(QBlueError, ValueError):
    """Output code outside [0, L-1]."""


class CoherenceError(QBlueError):
    """Record length or design vectors inconsistent with M samples x N periods."""


class DegenerateRecordError(QBlueError):
    """Record carries no quantile information (all samples in one code)."""


class RankDeficientError(QBlueError):
    """Design matrix is rank deficient; the model is not identifiable."""


class CovarianceFactorizationError(QBlueError):
    """Noise covariance could not be factorized even at the maximum ridge."""


class NonPhysicalSigmaError(QBlueError):
    """Model-2 solution implies a non-positive noise standard deviation."""


class FisherInformationError(QBlueError):
    """Fisher information is zero: no informative transition within reach."""


class TableFormatError(QBlueError):
    """CSV table with a wrong header or a malformed row."""
