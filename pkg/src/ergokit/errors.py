"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes: precondition violations exit
with 2, invariant violations with 3 and resource-guard rejections with 4.
"""


class ErgokitError(Exception):
    """Base class for all library errors."""


class PreconditionError(ErgokitError, ValueError):
    """An argument violates the documented contract of an operation."""


class ShapeMismatchError(PreconditionError):
    """Two functions that must live on the same domain do not."""


class MeasurabilityError(PreconditionError):
    """A function claimed to be e-measurable depends on other coordinates."""


class InvariantViolation(ErgokitError, RuntimeError):
    """An internal identity or guarantee failed; this indicates a bug."""


class ResourceGuardError(ErgokitError, MemoryError):
    """A dense allocation would exceed the configured entry cap."""


class AtomApproximationError(ErgokitError, RuntimeError):
    """No admissible polynomial was found for an atom within the retry cap.

    Usually means too much mass sits next to an atom boundary; rebuilding
    the factor with a fresh offset is the intended remedy.
    """


EXIT_CODES = {
    PreconditionError: 2,
    InvariantViolation: 3,
    ResourceGuardError: 4,
}


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1
