"""Exception hierarchy shared by all solver modules."""


class RbsdeLabError(Exception):
    """Base class. ``node`` carries the offending node id when known."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


# tree construction / primitives
class TreeError(RbsdeLabError):
    pass


class NonStochasticLaw(TreeError):
    pass


class EmptySupport(TreeError):
    pass


class DepthMismatch(TreeError):
    pass


class TerminalNode(TreeError):
    pass


class NotCentered(TreeError):
    pass


class InvalidStoppingTime(TreeError):
    pass


# skorohod
class NegativeStart(RbsdeLabError):
    pass


# solvers
class SolverError(RbsdeLabError):
    pass


class RootNotBracketed(SolverError):
    pass


class DriverEquivalenceViolation(SolverError):
    pass


class NotNormalised(SolverError):
    pass


class ObstacleAboveTerminal(SolverError):
    pass


class NonMonotone(SolverError):
    pass


class FamilyMemberInvalid(SolverError):
    pass


class OracleTooLarge(RbsdeLabError):
    pass


# priors
class InvalidTheta(SolverError):
    pass


class KappaInadmissible(SolverError):
    pass


class ScenarioNotAbsolutelyContinuous(SolverError):
    pass


# market
class EmptyPolytope(SolverError):
    pass


class NegativePrice(SolverError):
    pass


class NotComplete(SolverError):
    pass


# cli
class ParseError(RbsdeLabError):
    pass


class ValidationError(RbsdeLabError):
    """Aggregated validation failure; ``errors`` lists every violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
