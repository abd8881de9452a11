"""Exception types shared across the solvers."""


class ManevLabError(Exception):
    """Base class for all errors raised by this package."""


class SingularEvaluationError(ManevLabError):
    """Unregularized kernel evaluated at (or below guard distance of) zero separation."""

    def __init__(self, min_distance: float, guard: float = 0.0):
        self.min_distance = min_distance
        self.guard = guard
        super().__init__(
            f"singular kernel evaluation: min separation {min_distance:.3e} "
            f"below guard {guard:.3e} with epsilon = 0"
        )


class CollapseError(ManevLabError):
    """Collapse indicator fired during a run (concentration past the guard thresholds)."""

    def __init__(self, time: float, step_index: int, reason: str):
        self.time = time
        self.step_index = step_index
        self.reason = reason
        super().__init__(f"collapse event at t={time:.6g} (step {step_index}): {reason}")


class DivergenceError(ManevLabError):
    """Non-finite state encountered while stepping."""

    def __init__(self, step_index: int):
        self.step_index = step_index
        super().__init__(f"non-finite state at step {step_index}")


class EnvelopeMisfitError(ManevLabError):
    """Rejection sampler acceptance rate fell below the usability floor."""


class ConfigError(ManevLabError):
    """Scenario configuration failed schema validation."""
