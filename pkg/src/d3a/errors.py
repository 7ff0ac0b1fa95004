"""Exception types shared across the package."""


class D3AError(Exception):
    """Base class for all package errors."""


class InvalidInputError(D3AError, ValueError):
    pass


class ContractViolationError(D3AError, RuntimeError):
    """Raised when a caller breaks a documented pre-condition (e.g. stale caches)."""


class StateViolationError(D3AError, RuntimeError):
    pass


class OracleFailureError(D3AError, ArithmeticError):
    """A verification oracle produced a non-finite value."""


class TrainingDivergedError(D3AError, ArithmeticError):
    def __init__(self, epoch: int, step: int, detail: str = ""):
        self.epoch = epoch
        self.step = step
        msg = f"training diverged at epoch {epoch}, step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ParseError(D3AError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
