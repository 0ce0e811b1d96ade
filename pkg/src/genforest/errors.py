"""Exception types raised across the package.

Every error carries a short ``tag`` used by the command line to print a
single machine-parsable line.
"""


class ForestError(Exception):
    tag = "ForestError"

    def __str__(self):
        return f"{self.tag}: {super().__str__()}"


class MissingColumn(ForestError):
    tag = "MissingColumn"


class NonNumericCell(ForestError):
    tag = "NonNumericCell"

    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")


class EmptyFile(ForestError):
    tag = "EmptyFile"


class MissingRole(ForestError):
    tag = "MissingRole"

    def __init__(self, role):
        self.role = role
        super().__init__(f"model requires the {role} column")


class InvalidData(ForestError):
    tag = "InvalidData"


class DegenerateIdentification(ForestError):
    tag = "DegenerateIdentification"


class EmptySupport(ForestError):
    tag = "EmptySupport"


class UnsupportedForModel(ForestError):
    tag = "UnsupportedForModel"


class SingularCurvature(ForestError):
    tag = "SingularCurvature"


class InvalidOptions(ForestError):
    tag = "InvalidOptions"


class NoContributingTrees(ForestError):
    tag = "NoContributingTrees"


class GroupsUnavailable(ForestError):
    tag = "GroupsUnavailable"


class TooFewGroups(ForestError):
    tag = "TooFewGroups"


class LengthMismatch(ForestError):
    tag = "LengthMismatch"


class FeatureMismatch(ForestError):
    tag = "FeatureMismatch"


class UnknownDesign(ForestError):
    tag = "UnknownDesign"


class FormatError(ForestError):
    tag = "FormatError"


class FileError(ForestError):
    tag = "FileError"
