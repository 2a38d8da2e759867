from __future__ import annotations

from typing import Optional


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class SchemaFrozenError(ContractViolation):
    """Raised when a frozen (transferred) schema would be mutated."""


class TransferIncompatibleError(ValueError):
    """Schema horizon or skill vocabulary does not match the receiving task."""


class SchemaFormatError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    """The PPO loss went NaN/inf; parameters were rolled back before raising."""


class ConfigError(ValueError):
    def __init__(
        self, message: str, *, path: Optional[str] = None, line: Optional[int] = None
    ) -> None:
        self.message = message
        self.path = path
        self.line = line
        super().__init__(self.__str__())

    def __str__(self) -> str:
        if self.path is not None and self.line is not None:
            return f"{self.path}:{self.line}: {self.message}"
        if self.path is not None:
            return f"{self.path}: {self.message}"
        return self.message
