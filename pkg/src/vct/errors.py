"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class ValidationError(ValueError):
    """Corrupt or inconsistent on-disk data (container files, manifests, checkpoints)."""


class GradCheckError(RuntimeError):
    """Finite-difference harness hit a non-finite value."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, iteration, components):
        self.iteration = iteration
        self.components = components
        parts = ", ".join(f"{k}={v:.6g}" for k, v in components.items())
        super().__init__(f"non-finite loss at iteration {iteration} ({parts})")
