class ConfigError(ValueError):
    """Invalid model, regressor or experiment configuration."""


class SingularGramError(ValueError):
    """A (weighted) Gram matrix is too close to singular to invert."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


class ConsistencyError(RuntimeError):
    """A quantity that is provably bounded came out on the wrong side."""


class IntegrationError(RuntimeError):
    """ODE integration left the admissible region (R lost definiteness)."""
