"""Exception hierarchy for the simtune toolkit.

Every error carries an ``exit_code`` so the command line can map failures to
the documented exit classes without inspecting messages.
"""

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_CHECK_FAILED = 5
EXIT_PRECONDITION = 6


class SimtuneError(Exception):
    """Base exception for toolkit errors."""

    exit_code = EXIT_INTERNAL


# Configuration and input


class ConfigurationError(SimtuneError):
    """Configuration document could not be parsed or failed validation."""

    exit_code = EXIT_CONFIG


class MissingInputError(SimtuneError):
    """A referenced input file does not exist or cannot be read."""

    exit_code = EXIT_INPUT


class InvalidSpecError(ConfigurationError):
    """Synthetic dataset specification violates its invariants."""


# Shapes and values


class DimMismatchError(SimtuneError):
    """Array shapes are inconsistent with each other."""

    exit_code = EXIT_PRECONDITION


ShapeMismatchError = DimMismatchError


class ZeroRowError(SimtuneError):
    """A row has (near) zero norm and cannot be normalized."""

    exit_code = EXIT_PRECONDITION


class NonFiniteError(SimtuneError):
    """A computed value is NaN or infinite."""

    exit_code = EXIT_NUMERICAL


class NonFiniteEvaluationError(NonFiniteError):
    """A function evaluated during finite differencing returned a non-finite value."""


class NonFiniteGradientError(NonFiniteError):
    """The optimizer received a gradient containing NaN or infinity."""


class DivergenceDetectedError(NonFiniteError):
    """Training produced a non-finite objective and was aborted."""


# Encoder, losses and sampling


class UnknownCaptionError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class LabelOutOfRangeError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class DuplicateIdentityError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class EmptyClassNameError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class BatchTooLargeError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class EmptyDatasetError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class NotEnoughIdentitiesError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class IdentityHasSingleImageError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class StepOutOfRangeError(SimtuneError):
    exit_code = EXIT_PRECONDITION


# Evaluation


class KOutOfRangeError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class EmptyScoresError(SimtuneError):
    exit_code = EXIT_PRECONDITION


class EmptyClassError(SimtuneError):
    exit_code = EXIT_PRECONDITION


# Checks


class GradientCheckFailedError(SimtuneError):
    """One or more analytic gradients disagree with finite differences."""

    exit_code = EXIT_CHECK_FAILED

    def __init__(self, failing: dict):
        self.failing = dict(failing)
        names = ", ".join(
            f"{name} (max rel-err {err:.3e})" for name, err in self.failing.items()
        )
        super().__init__(f"Gradient check failed for: {names}")
