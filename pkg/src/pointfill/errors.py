"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or ranks."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class NumericsError(ArithmeticError):
    """A computation produced or received non-finite values."""


class FormatError(ValueError):
    """A binary artifact (checkpoint) is malformed or inconsistent."""


class ParseError(ValueError):
    """A text file (xyz/ply/config) could not be parsed."""
