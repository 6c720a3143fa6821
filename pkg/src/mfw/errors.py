"""Exception types shared across modules."""


class ConfigurationError(ValueError):
    """Invalid model, grid or run configuration.

    ``field`` names the offending key (``section.key`` for config files) and
    ``line`` the 1-based source line when known.
    """

    def __init__(self, message, field=None, line=None, source=None):
        self.field = field
        self.line = line
        self.source = source
        super().__init__(message)

    def diagnostic(self):
        loc = []
        if self.source is not None:
            loc.append(str(self.source))
        if self.line is not None:
            loc.append(str(self.line))
        prefix = ":".join(loc)
        where = f"[{self.field}] " if self.field else ""
        return f"{prefix + ': ' if prefix else ''}{where}{self}"


class BlowUp(RuntimeError):
    """State norm left the guard ball (or became non-finite) at ``step``."""

    def __init__(self, step, norm, radius):
        self.step = step
        self.norm = norm
        self.radius = radius
        super().__init__(f"state norm {norm:.3g} exceeded guard radius {radius:.3g} at step {step}")


class DissipativityViolated(ValueError):
    """Frozen fast dynamics are not contractive (non-positive gap)."""


class NonConvergence(RuntimeError):
    """A Monte Carlo estimate did not reach its requested precision."""

    def __init__(self, message, estimate=None, stderr=None):
        self.estimate = estimate
        self.stderr = stderr
        super().__init__(message)


class InfeasibleEvent(RuntimeError):
    """Too few hits to estimate a tail probability."""

    def __init__(self, message, hits=None):
        self.hits = hits
        super().__init__(message)


class JacobianUnavailable(NotImplementedError):
    """No analytic linearization for the requested coefficient."""


class MaxIterations(RuntimeError):
    """Optimizer stopped at its iteration cap; ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)
