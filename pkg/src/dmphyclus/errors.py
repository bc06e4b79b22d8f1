"""Exception hierarchy shared by all modules."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class DomainError(ValidationError):
    """Numeric argument outside the supported domain."""


class ParseError(ValidationError):
    """Malformed FASTA or Newick input."""


class AlignmentShapeError(ValidationError):
    """Sequences of unequal length."""
