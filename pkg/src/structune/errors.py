"""Exception hierarchy shared by all modules."""


class StructuneError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(StructuneError):
    """Operands have incompatible shapes."""


class IllPosed(StructuneError):
    """An algebraic loop matrix is numerically singular."""


class ResolventSingular(StructuneError):
    """Frequency response requested at (or too close to) a pole."""


class Unstable(StructuneError):
    """A norm that requires stability was requested for an unstable system."""


class NonzeroFeedthrough(StructuneError):
    """Continuous-time H2 norm is infinite for systems with d != 0."""


class SingularR(StructuneError):
    """Level-set matrix gamma^2 I - D'D lost definiteness."""


class NoConvergence(StructuneError):
    """An iterative routine exhausted its iteration budget."""


class BoundViolation(StructuneError):
    """Parameter vector violates its box bounds."""


class MissingScheduleValue(StructuneError):
    """A scheduled structure was assembled without a scheduling value."""


class QPFailure(StructuneError):
    """The simplex-constrained tangent QP could not be solved."""


class Unstabilizable(StructuneError):
    """The stabilization phase exhausted its budget without success."""


class InfeasibleHard(StructuneError):
    """Penalty escalation exhausted without meeting the hard constraints."""


class QEqualsOne(StructuneError):
    """The boundary damping parameter must satisfy q > 0, q != 1."""


class AlgebraicLoop(StructuneError):
    """A delay network contains an unsolvable instantaneous loop."""


class StepTooLarge(StructuneError):
    """Simulation step exceeds a tenth of the shortest delay."""


class CFLViolation(StructuneError):
    """Wave simulation requires the time step to equal the grid spacing."""


class ParseError(StructuneError):
    """Malformed input file."""
