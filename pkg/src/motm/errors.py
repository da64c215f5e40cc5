"""Exception types shared across the package."""


class ModelError(ValueError):
    """Robot model file is malformed or dimensionally inconsistent."""


class ConfigError(ValueError):
    """Scene/experiment configuration violates the schema."""


class DegenerateMissionError(ValueError):
    """Approach geometry is undefined (e.g. target coincides with the next objective)."""


class PlanningFailure(RuntimeError):
    """Trajectory optimization did not produce a usable plan."""
