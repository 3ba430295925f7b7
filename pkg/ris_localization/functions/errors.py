"""Exceptions raised by ris_localization. All of them are ValueErrors."""


class RisLocalizationError(ValueError):
    """Base class for all domain errors of the package"""


class InvalidSceneError(RisLocalizationError):
    pass


class InvalidPathError(RisLocalizationError):
    pass


class InvalidDelayError(RisLocalizationError):
    pass


class InvalidRISConfigurationError(RisLocalizationError):
    pass


class SpatialFrequencyOverflowError(RisLocalizationError):
    pass


class AmbiguousGeometryError(RisLocalizationError):
    pass


class ResidualCollapseError(RisLocalizationError):
    pass


class IllPosedProblemError(RisLocalizationError):
    pass


class ShapeMismatchError(RisLocalizationError):
    pass


class ConfigError(RisLocalizationError):
    """Any problem with a run configuration file"""


class ConfigFileError(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)
        self.line = line


class ConfigKeyError(ConfigError):
    def __init__(self, key, message=None):
        super().__init__(message or f'unknown configuration key: {key}')
        self.key = key


class ConfigTypeError(ConfigError):
    def __init__(self, key, expected, value):
        super().__init__(f'{key}: expected {expected}, got {value!r}')
        self.key = key


class ConfigValueError(ConfigError):
    def __init__(self, key, message):
        super().__init__(f'{key}: {message}')
        self.key = key
