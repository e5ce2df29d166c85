"""Exception taxonomy shared by the library and the CLI."""


class TcvError(Exception):
    """Base class for all library errors."""


class InvalidArgument(TcvError, ValueError):
    pass


class ContractViolation(TcvError):
    """A caller broke an adaptedness or table-region contract."""


class IllConditionedRegression(TcvError):
    pass


class NumericalBlowup(TcvError):
    def __init__(self, message, cell=None):
        super().__init__(message if cell is None else f"{message} (cell {cell})")
        self.cell = cell


class NoConvergence(TcvError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ScenarioInfeasible(TcvError):
    def __init__(self, message, paths=None):
        super().__init__(message)
        self.paths = [] if paths is None else list(paths)


class OracleError(TcvError):
    pass


class ConfigError(TcvError):
    """Bad run configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where += f" [key: {key}]"
        if line is not None:
            where += f" [line {line}]"
        super().__init__(message + where)
        self.key = key
        self.line = line
