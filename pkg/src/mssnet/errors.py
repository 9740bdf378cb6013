class ContractViolation(ValueError):
    """An operation was called outside its documented contract."""


class FormatError(IOError):
    """A persisted file (weights, config, image) is malformed."""


class TrainingDiverged(RuntimeError):
    """The loss went non-finite; the message names the offending head."""
