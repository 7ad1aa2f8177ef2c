"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its documented bounds."""


class DecodeError(ValueError):
    """Raster bytes could not be decoded into an image."""


class ShapeError(ValueError):
    """A tensor does not have the required shape."""


class ModelUnavailableError(RuntimeError):
    """No trained model is loaded; callers must fail closed."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or fails its integrity checks."""


class InsufficientSourceError(ValueError):
    """Source directory holds fewer decodable images than requested."""


class InsufficientDataError(ValueError):
    """A dataset split would receive fewer than one item per class."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


class EmptySetError(ValueError):
    """An evaluation was requested over an empty item set."""


class EmptyClassError(ValueError):
    """A metric requiring both classes saw only one."""


class RangeError(ValueError):
    """A payload field exceeds its fixed bit width."""


class ImageTooSmallError(ValueError):
    """Image has too few 8x8 blocks to carry the identifier frame."""
