"""Exception hierarchy shared by the solvers and the CLI."""


class MFBSVIError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


class InvalidObstacleError(MFBSVIError, ValueError):
    """The obstacle violates convexity, normalization or returned NaN."""

    exit_code = 2


class ProxFailureError(MFBSVIError, ArithmeticError):
    """Numeric resolvent did not converge."""


class SimulationDivergedError(MFBSVIError, ArithmeticError):
    """A forward state became NaN or infinite."""

    def __init__(self, m: int, i: int, value: float):
        self.m, self.i, self.value = m, i, value
        super().__init__(f"simulation diverged at step m={m}, particle i={i} (value={value!r})")


class DegenerateRegressionError(MFBSVIError, ArithmeticError):
    """Normal equations are rank-deficient and no ridge was supplied."""


class StepDivergedError(MFBSVIError, ArithmeticError):
    """A finite-difference backward step blew up."""

    def __init__(self, m: int, detail: str = ""):
        self.m = m
        super().__init__(f"finite-difference step diverged at time node m={m}{': ' + detail if detail else ''}")


class InfeasibleTerminalError(MFBSVIError, ValueError):
    """Terminal values fall outside the obstacle's domain."""


class ConfigError(MFBSVIError, ValueError):
    """Run configuration is invalid; carries every violation found."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
