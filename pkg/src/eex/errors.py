"""Exception hierarchy shared by the whole package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, ContractError -> 3.
"""


class EexError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EexError):
    """Invalid configuration, flags, or incompatible run settings."""


class DataError(EexError):
    """Malformed corpus, vocabulary, or checkpoint input."""


class ContractError(EexError):
    """A runtime invariant or operation precondition was violated."""


class ShapeError(ContractError):
    """Tensor shapes incompatible with the requested operation."""


class NonFiniteError(ContractError):
    """A NaN or Inf appeared in a forward or backward computation."""
