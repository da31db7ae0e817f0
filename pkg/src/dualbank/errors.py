"""Exception hierarchy shared across the pipeline.

DataError covers everything caused by bad inputs (files, manifests,
configs); the CLI maps it to exit code 2. Programming-contract violations
stay plain ValueError/TypeError.
"""


class DataError(Exception):
    """Invalid or unusable input data."""


class EtfError(DataError):
    """Malformed ETF tensor file."""


class BadMagicError(EtfError):
    pass


class UnknownDtypeError(EtfError):
    pass


class TruncatedError(EtfError):
    pass


class InvalidHeaderError(EtfError):
    pass


class ManifestError(DataError):
    """Dataset manifest violates the schema. Message carries the field path."""


class BankFormatError(DataError):
    """Malformed bank-pair file."""


class BankVersionError(BankFormatError):
    pass


class BankChecksumError(BankFormatError):
    pass


class EmptyPositiveSetError(DataError):
    """No defective patches survived mask selection."""


class MissingPositiveBankError(DataError):
    """Ratio scoring requested but the bank pair has no positive bank."""
