"""Exception hierarchy. Each class carries a short machine-readable category."""


class OCEError(Exception):
    category = "error"


class ConfigError(OCEError, ValueError):
    category = "config"


class DimensionError(OCEError, ValueError):
    category = "dimension"


class NotTwiceDifferentiable(OCEError):
    category = "not_twice_differentiable"


class NotApplicable(OCEError):
    category = "not_applicable"


class SingularJacobian(OCEError, ArithmeticError):
    category = "singular_jacobian"


class SingularSensitivity(OCEError, ArithmeticError):
    category = "singular_sensitivity"

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class DegenerateStep(OCEError, ArithmeticError):
    category = "degenerate_step"


class NonPdScatter(OCEError, ArithmeticError):
    category = "non_pd_scatter"


class DataError(OCEError, ValueError):
    category = "data"
