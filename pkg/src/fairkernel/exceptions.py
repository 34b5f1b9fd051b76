"""Exception hierarchy.

Every error raised on purpose by the package derives from ``FairKernelError``
so the CLI can turn it into a machine-readable error document.
"""


class FairKernelError(Exception):
    """Base class for all package errors."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class ValidationError(FairKernelError, ValueError):
    code = "validation_error"


class DimensionMismatchError(ValidationError):
    code = "dimension_mismatch"


class NotPSDError(ValidationError):
    """Kernel matrix has eigenvalues too negative to be a valid Gram matrix."""

    code = "not_psd"


class ConvexityError(NotPSDError):
    code = "convexity_error"


class DegenerateAttributeError(FairKernelError):
    """The fitted direction for the protected attribute vanished.

    Raised when no ridge-predictable information about the protected
    attribute is left in the kernel. Callers sweeping over iterations may
    treat this as convergence.
    """

    code = "degenerate_attribute"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration

    def to_dict(self):
        d = super().to_dict()
        d["iteration"] = self.iteration
        return d


class CollinearAttributesError(DegenerateAttributeError):
    code = "collinear_attributes"


class FingerprintMismatchError(ValidationError):
    code = "fingerprint_mismatch"


class LandmarkDegeneracyError(FairKernelError):
    code = "landmark_degeneracy"


class ConvergenceError(FairKernelError):
    code = "no_convergence"

    def __init__(self, message, duality_gap=None):
        super().__init__(message)
        self.duality_gap = duality_gap

    def to_dict(self):
        d = super().to_dict()
        d["duality_gap"] = self.duality_gap
        return d


class DatasetError(FairKernelError):
    code = "dataset_error"


class ConfigError(ValidationError):
    code = "config_error"


class ExperimentError(FairKernelError):
    """Module error annotated with the fold and iteration count it occurred at."""

    code = "experiment_error"

    def __init__(self, message, fold=None, m=None, cause=None):
        super().__init__(message)
        self.fold = fold
        self.m = m
        self.cause = cause

    def to_dict(self):
        d = super().to_dict()
        d.update(fold=self.fold, m=self.m)
        if self.cause is not None and isinstance(self.cause, FairKernelError):
            d["cause"] = self.cause.to_dict()
        return d
