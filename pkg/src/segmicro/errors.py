"""Exception types raised across the package."""


class SegmicroError(Exception):
    pass


class ShapeError(SegmicroError, ValueError):
    pass


class ConfigError(SegmicroError, ValueError):
    pass


class DataError(SegmicroError, ValueError):
    pass


class StateError(SegmicroError, RuntimeError):
    pass


class TrainingError(SegmicroError, RuntimeError):
    pass
