"""Exception types shared across the package."""


class CatchError(Exception):
    """Base class for all package errors."""


class ContractError(CatchError):
    """A precondition of an operation was violated."""


class ShapeError(CatchError, ValueError):
    pass


class ConfigError(CatchError, ValueError):
    pass


class FrozenParameterError(ContractError):
    """Attempted write to a parameter with trainable=False."""


class HookLookupError(CatchError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class HookConflictError(CatchError):
    pass


class FormatError(CatchError):
    """Corrupt, truncated or checksum-mismatched file."""


class StateError(CatchError):
    pass


class MissingArtifactError(CatchError):
    def __init__(self, artifact, command):
        super().__init__(f"missing artifact {artifact}; build it with: {command}")
        self.artifact = artifact
        self.command = command
