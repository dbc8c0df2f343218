"""Exception hierarchy. Every engine error carries a stable ``code`` for CLI output."""


class DataCaseError(Exception):
    code = "error"


class ValidationError(DataCaseError, ValueError):
    code = "ValidationError"


class EmptyInputs(ValidationError):
    code = "EmptyInputs"


class ErasedInput(DataCaseError):
    code = "ErasedInput"


class UnknownUnit(DataCaseError, KeyError):
    code = "UnknownUnit"

    def __str__(self):
        return Exception.__str__(self)


class DuplicateId(DataCaseError):
    code = "DuplicateId"


class PolicyDenied(DataCaseError):
    code = "PolicyDenied"


class Inaccessible(DataCaseError):
    code = "Inaccessible"


class InvalidTransition(DataCaseError):
    code = "InvalidTransition"


class TimeRegression(DataCaseError):
    code = "TimeRegression"


class UnitLive(DataCaseError):
    code = "UnitLive"


class UnknownWorkload(DataCaseError, KeyError):
    code = "UnknownWorkload"

    def __str__(self):
        return Exception.__str__(self)


class DirectoryNotEmpty(DataCaseError):
    code = "DirectoryNotEmpty"


class StoreLocked(DataCaseError):
    code = "StoreLocked"


class CorruptFile(DataCaseError):
    code = "CorruptFile"
