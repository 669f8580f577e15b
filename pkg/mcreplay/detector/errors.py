class DetectorError(RuntimeError):
    ...


class DimensionError(DetectorError):
    ...


class NumericError(DetectorError):
    ...


class InputError(DetectorError):
    ...


class ParseError(DetectorError):
    ...


class UnsupportedFormatError(DetectorError):
    ...


class GeometryError(DetectorError):
    ...


class ConfigurationError(DetectorError):
    ...
