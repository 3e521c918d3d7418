"""Exception types raised by the numerical core."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested quantity."""


class SingularityError(ArithmeticError):
    """The requested quantity is singular at this point (rho = 0 at a knot)."""


class MidpointDegenerate(ArithmeticError):
    """Jump moments requested within ``midpoint_eps`` of the segment midpoint.

    The jump rate vanishes there and the jump distribution is undefined; callers
    should treat the jump channel as switched off.
    """


class DegenerateJump(ArithmeticError):
    """The jump distribution has (numerically) zero mass."""


class DivergenceError(FloatingPointError):
    """A training or simulation quantity became non-finite."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
