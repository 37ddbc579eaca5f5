"""Exception types shared across modules (mapped to CLI exit codes)."""


class CVQCError(Exception):
    exit_code = 1


class ParameterError(CVQCError, ValueError):
    exit_code = 2


class InfeasibleParameters(ParameterError):
    pass


class GenerationError(CVQCError):
    exit_code = 2


class ResourceError(CVQCError):
    exit_code = 3


class InputError(CVQCError, ValueError):
    exit_code = 4


class ConfigError(CVQCError, ValueError):
    exit_code = 5


class NotInvertible(Exception):
    """Inversion found no preimage within bounds; a protocol signal, not a fault."""


class DecodeError(CVQCError, ValueError):
    exit_code = 4
