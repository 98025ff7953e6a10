from typing import Optional


class PatchletError(Exception):
    """Base class for every error raised on purpose by the package"""


class InvalidInput(PatchletError, ValueError):
    pass


class DegenerateFace(PatchletError):
    def __init__(self, face_id: int, message: Optional[str] = None):
        self.face_id = face_id
        super().__init__(message or f"Face {face_id} is degenerate")


class InvalidState(PatchletError, RuntimeError):
    pass


class InvalidKernel(PatchletError):
    pass


class NonManifold(PatchletError):
    pass


class ExtractionFailed(PatchletError):
    pass


class EmptyScene(PatchletError):
    pass


class DatasetError(PatchletError):
    def __init__(self, message: str, path=None):
        self.path = path
        super().__init__(f"{message}: {path}" if path is not None else message)


class VersionError(PatchletError):
    pass


class PatchletIOError(PatchletError, OSError):
    def __init__(self, message: str, path=None):
        self.path = path
        super().__init__(f"{message}: {path}" if path is not None else message)


class ConfigError(PatchletError):
    pass


class LossDiverged(PatchletError, FloatingPointError):
    def __init__(self, term: str, iteration: Optional[int] = None):
        self.term = term
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"Loss term '{term}' is not finite{where}")


class EmptySceneWarning(UserWarning):
    """Density control pruned every face"""
