"""Exception hierarchy shared by all featgram modules."""

from __future__ import annotations


class FeatgramError(Exception):
    """Base class for every error raised by this package."""


class LexicalError(FeatgramError):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} at line {line}, col {col}"
        super().__init__(message)


class SyntaxError_(FeatgramError):
    """Surface-syntax error; carries the expected-token set."""

    def __init__(self, message, line=None, col=None, expected=()):
        self.line = line
        self.col = col
        self.expected = tuple(sorted(expected))
        if line is not None:
            message = f"{message} at line {line}, col {col}"
        super().__init__(message)


class TemplateError(FeatgramError):
    pass


class LatticeError(FeatgramError):
    pass


class StaleEncodingError(LatticeError):
    pass


class BuildError(FeatgramError):
    """A description cannot be compiled into a feature structure."""


class UnsupportedNegation(BuildError):
    pass


class ContractError(FeatgramError):
    """Caller violated an operation precondition."""


class FunctionError(FeatgramError):
    pass


class GrammarError(FeatgramError):
    pass


class StrategyError(FeatgramError):
    pass


class GenerationGap(FeatgramError):
    def __init__(self, predicate):
        self.predicate = predicate
        super().__init__(f"no lexical entry for predicate {predicate!r}")


class StoreError(FeatgramError):
    pass


class SerializationError(FeatgramError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class SuiteError(FeatgramError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WeightsError(FeatgramError):
    """Malformed preference weights."""
