"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems exit 2, data problems
exit 3, numerical faults exit 4.
"""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its contract
    (shape mismatches, non-scalar backward roots, and the like)."""


class ConfigurationError(ValueError):
    """A configuration object or user-supplied setting is invalid."""


class DataError(RuntimeError):
    """Input data is missing, unreadable, or structurally broken."""


class EngineFault(FloatingPointError):
    """A tensor operation produced NaN or Inf; the engine guarantees
    finite values, so this always indicates a fault."""


class TrainingFault(RuntimeError):
    """Training hit a numerical fault (e.g. NaN gradients or loss)."""


class DegenerateSampleError(ValueError):
    """A statistical routine received a sample it cannot process,
    e.g. a constant vector or all-zero differences."""
