"""
Exception hierarchy shared by every module
"""


class TextEraseError(Exception):
    """Base class for all text-eraser errors"""


class ConfigError(TextEraseError, ValueError):
    pass


# ==================== Images ====================

class FileNotFound(TextEraseError, FileNotFoundError):
    pass


class UnsupportedFormat(TextEraseError):
    pass


class CorruptImage(TextEraseError):
    pass


class ImageIoError(TextEraseError, OSError):
    pass


class InvalidQuality(TextEraseError, ValueError):
    pass


class ShapeMismatch(TextEraseError, ValueError):
    pass


class ImageTooSmall(TextEraseError, ValueError):
    pass


class NonFiniteInput(TextEraseError, ValueError):
    pass


# ==================== Synthesis ====================

class FontLoadError(TextEraseError):
    pass


class EmptyText(TextEraseError, ValueError):
    pass


class NoFonts(TextEraseError):
    pass


class NoBackgrounds(TextEraseError):
    pass


class RegionOutOfBounds(TextEraseError, ValueError):
    pass


class SolverNotConverged(TextEraseError):
    """Poisson solve stopped at the iteration cap"""

    def __init__(self, residual: float):
        super().__init__(f"Poisson solver did not converge (residual {residual:.3e})")
        self.residual = residual


# ==================== Geometry ====================

class DegenerateRegion(TextEraseError, ValueError):
    pass


class DegenerateConfiguration(TextEraseError, ValueError):
    pass


class SingularSystem(TextEraseError):
    pass


# ==================== Training / evaluation ====================

class NoBnLayers(TextEraseError):
    pass


class NonFiniteLoss(TextEraseError):
    """Raised when a training step produces NaN/inf"""

    def __init__(self, diagnostics: dict):
        terms = ', '.join(f"{k}={v}" for k, v in diagnostics.items())
        super().__init__(f"Non-finite loss: {terms}")
        self.diagnostics = diagnostics


class UnmatchedFiles(TextEraseError):
    pass
