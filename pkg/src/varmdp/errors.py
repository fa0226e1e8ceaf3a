"""
Errors - exception hierarchy shared by the solvers, loaders and CLI
"""
from typing import Optional, Sequence


class VarMdpError(Exception):
    """Base class for every error raised by varmdp."""


class InvalidMdpError(VarMdpError):
    """Raised when a solver receives an instance that fails validation."""

    def __init__(self, report):
        self.report = report
        super().__init__("invalid MDP:\n" + "\n".join(f"  - {v}" for v in report.violations))


class ChainStructureError(VarMdpError):
    """The chain induced by a policy does not have the required structure."""

    def __init__(self, message: str, policy: Optional[Sequence[int]] = None):
        self.policy = None if policy is None else tuple(int(a) for a in policy)
        super().__init__(message)


class MultichainError(ChainStructureError):
    def __init__(self, recurrent_classes, policy=None):
        self.recurrent_classes = recurrent_classes
        sizes = ", ".join(str(len(c)) for c in recurrent_classes)
        super().__init__(
            f"policy induces {len(recurrent_classes)} recurrent classes (sizes {sizes})", policy
        )


class PeriodicError(ChainStructureError):
    def __init__(self, period: int, policy=None):
        self.period = period
        super().__init__(f"recurrent class is periodic with period {period}", policy)


class NonConvergence(VarMdpError):
    """Howard iteration exceeded its iteration cap."""


class IterationCapExceeded(VarMdpError):
    """An outer VaR iteration exceeded its finite-termination bound."""


class CapExceeded(VarMdpError):
    """An exhaustive oracle would enumerate more cases than allowed."""


class MissingResolution(VarMdpError):
    """The augmented engine needs rewards on a declared integer grid."""


class GridUnderflow(VarMdpError):
    """A remaining-goal lookup left the lambda grid."""


class InfeasibleState(VarMdpError):
    """A constructed state has no admissible action."""


class ParseError(VarMdpError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class SchemaVersionError(VarMdpError):
    """Instance file declares a version this reader does not understand."""


class ManifestError(VarMdpError):
    """Run manifest is missing fields or combines them invalidly."""


class MissingArtifact(VarMdpError):
    """A run directory lacks the files an export needs."""
