"""Exception types shared across the package."""


class LatentSpecError(Exception):
    """Base class for all package errors."""


class DimensionError(LatentSpecError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(LatentSpecError, ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NumericError(LatentSpecError, ValueError):
    """Non-finite values where finite ones are required."""


class SpectrumCorruptionError(NumericError):
    """A half-spectrum failed its Hermitian-consistency check on synthesis."""


class ConfigError(LatentSpecError, ValueError):
    """Invalid configuration value."""


class DomainError(LatentSpecError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class SamplerDivergenceError(LatentSpecError, RuntimeError):
    """ODE sampler state became non-finite."""

    def __init__(self, step: int, sigma: float):
        self.step = step
        self.sigma = sigma
        super().__init__(f"sampler state non-finite at step {step} (sigma={sigma:g})")


class TrainingAbortedError(LatentSpecError, RuntimeError):
    """Training loss became non-finite; carries diagnostics."""

    def __init__(self, step: int, sigmas, mask_density: float):
        self.step = step
        self.sigmas = list(sigmas)
        self.mask_density = mask_density
        super().__init__(
            f"non-finite loss at step {step}; batch sigmas={self.sigmas}, "
            f"mask density={mask_density:.3f}"
        )
