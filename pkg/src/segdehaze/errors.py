"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class DomainError(ValueError):
    """A value lies outside the range an operation accepts."""


class CapacityError(ValueError):
    """More segments than the 1..255 gray code space can hold."""


class ConfigError(ValueError):
    pass


class FormatError(ValueError):
    """A serialized container is malformed."""


class MaskValidationError(ValueError):
    pass


class VariantContextError(ValueError):
    """The context given to input assembly lacks what a mask variant needs."""


class DataError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class GroupingError(ValueError):
    pass
