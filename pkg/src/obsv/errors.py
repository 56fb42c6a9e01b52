"""Exception hierarchy shared by all obsv modules."""


class ObsvError(Exception):
    """Base class for every error raised by obsv."""


class DimensionMismatch(ObsvError, ValueError):
    pass


class NotEnergyPreserving(ObsvError, ValueError):
    def __init__(self, triple, residual):
        self.triple = tuple(int(i) for i in triple)
        self.residual = float(residual)
        i, j, k = (t + 1 for t in self.triple)
        super().__init__(
            f"nonlinearity is not energy preserving: symmetrized coefficient "
            f"for index triple ({i},{j},{k}) is {self.residual:.3e}"
        )


class ParseError(ObsvError, ValueError):
    def __init__(self, msg, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + msg)


class EmptySubspace(ObsvError, ValueError):
    pass


class EmptyRegion(ObsvError, ValueError):
    pass


class UnsupportedRegionForm(ObsvError, ValueError):
    pass


class NonPositiveArgument(ObsvError, ValueError):
    pass


class Infeasible(ObsvError):
    """The optimization problem (or a certificate) has no solution."""

    def __init__(self, msg, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(msg)


class NumericalTrouble(ObsvError):
    pass


class IterationStalled(NumericalTrouble):
    pass


class NotDissipative(ObsvError, ValueError):
    pass


class UnstableClosedLoop(ObsvError, ValueError):
    pass


class ObserverTrapInfeasible(Infeasible):
    pass


class NonFinite(ObsvError, ArithmeticError):
    def __init__(self, step, t):
        self.step = int(step)
        self.t = float(t)
        super().__init__(f"state left the finite range at step {self.step} (t={self.t:g})")


class AssumptionViolated(ObsvError, ValueError):
    """A structural precondition on the model does not hold."""
