"""Exception hierarchy shared by every stage of the pipeline."""


class Demo2ProgError(Exception):
    """Base class for all pipeline errors."""


class InvalidArgumentError(Demo2ProgError, ValueError):
    pass


class UnreachableTargetError(Demo2ProgError):
    pass


class ConvergenceError(Demo2ProgError):
    pass


class StabilityError(Demo2ProgError):
    pass


class DivergenceError(Demo2ProgError):
    pass


class DegenerateWeightsError(Demo2ProgError):
    def __init__(self, timestep, message=None):
        self.timestep = timestep
        super().__init__(message or f"all particle likelihoods degenerate at t={timestep}")


class ContractViolationError(Demo2ProgError, ValueError):
    pass


class GroundingFailureError(Demo2ProgError):
    def __init__(self, symbol, message=None):
        self.symbol = symbol
        super().__init__(message or f"cannot ground symbol {symbol}")


class MatchNotFoundError(GroundingFailureError):
    pass


class PartialGroundingError(Demo2ProgError):
    def __init__(self, failed):
        self.failed = sorted(failed)
        super().__init__(f"grounding failed for symbols {self.failed}")


class ConfigError(Demo2ProgError):
    pass


class UpstreamMissingError(Demo2ProgError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"missing upstream input: {path}")


class StatisticsError(Demo2ProgError):
    pass


class ProgramParseError(Demo2ProgError):
    def __init__(self, message, line=None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
