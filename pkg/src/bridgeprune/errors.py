"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class BridgePruneError(Exception):
    exit_code = 1


class ConfigError(BridgePruneError, ValueError):
    exit_code = 2


class DimensionError(ConfigError):
    """Tensor shapes do not chain."""


class SpecError(ConfigError):
    """A PruneSpec refers to filters that do not exist."""


class FormatError(BridgePruneError):
    exit_code = 3


class CheckpointError(FormatError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass


class CheckpointTensorError(CheckpointError):
    def __init__(self, name, msg):
        super().__init__(f"tensor {name!r}: {msg}")
        self.tensor = name


class NumericError(BridgePruneError, ArithmeticError):
    exit_code = 4


class UnsupportedStructureError(BridgePruneError):
    exit_code = 5


class LifecycleError(BridgePruneError, RuntimeError):
    """begin/end of a perturbation window called out of order."""


class InputError(BridgePruneError, ValueError):
    """Bad call-site data: labels out of range, empty dataset."""
    exit_code = 2
