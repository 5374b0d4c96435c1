"""Exception hierarchy shared by every stage of the pipeline."""


class FacePipeError(Exception):
    """Base class for all pipeline errors."""


# image ingestion / preprocessing
class UnsupportedFormat(FacePipeError):
    pass


class CorruptHeader(FacePipeError):
    pass


class DegenerateEyes(FacePipeError):
    pass


class InvalidAnnotation(FacePipeError):
    pass


# gabor
class KernelLargerThanImage(FacePipeError):
    pass


# subspace
class EmptyClass(FacePipeError):
    pass


class SingleClass(FacePipeError):
    pass


class RankDeficient(FacePipeError):
    pass


class TargetTooLarge(FacePipeError):
    pass


class DimensionMismatch(FacePipeError, ValueError):
    pass


# svm
class NonLinearKernel(FacePipeError):
    pass


class NoConvergence(FacePipeError):
    """SMO hit its iteration cap.

    The partially optimized model and its dual objective are attached so
    callers can decide whether the result is usable.
    """

    def __init__(self, message, model=None, dual_objective=None):
        super().__init__(message)
        self.model = model
        self.dual_objective = dual_objective


# knn / evaluation
class ZeroVector(FacePipeError):
    pass


class UnknownSubject(FacePipeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyScores(FacePipeError):
    pass


class NoCrossing(FacePipeError):
    pass


# pipeline / persistence
class EmptyDataset(FacePipeError):
    pass


class MissingViewTags(FacePipeError):
    pass


class InsufficientImages(FacePipeError):
    pass


class ConfigError(FacePipeError):
    pass


class VersionMismatch(FacePipeError):
    pass


class CorruptFile(FacePipeError):
    pass
