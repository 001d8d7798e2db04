"""
Exceptions raised by the oms library.

Classes:

OMSError: Base class of every library error.
ConfigurationError: Invalid configuration, missing nuisance slot or truth, unknown family.
SchemaError: A sample or CSV table lacks a declared variable or holds a non-numeric cell.
UnsupportedModelError: Inputs outside the supported model class.
PositivityError: A propensity evaluation outside the open unit interval.
UnderIdentificationError: A moment has never been selected.
DegenerateSurfaceError: The variance surface is infinite on the whole simplex.
UndefinedMetricError: A metric is undefined for the given inputs.
EndOfRun: A policy has exhausted its horizon or budget.
"""


class OMSError(Exception):
    """
    Base class for errors raised by the oms library.
    """


class ConfigurationError(OMSError):
    """
    The configuration is invalid or incomplete.
    """


class SchemaError(ConfigurationError):
    """
    A required variable is missing or a cell cannot be read as a number.

    Attributes:
        variable (str): The offending variable or column name.
        row (int | None): 1-based data row of a CSV file, when applicable.
    """

    def __init__(self, message, variable=None, row=None):
        super().__init__(message)
        self.variable = variable
        self.row = row


class UnsupportedModelError(ConfigurationError):
    """
    The data or model lies outside what the estimators support.
    """


class PositivityError(OMSError):
    """
    A propensity score is not strictly inside (0, 1).
    """


class UnderIdentificationError(OMSError):
    """
    A moment condition has no selected records so the parameter is not identified.

    Attributes:
        moment (int): Index of the first moment without records.
        moment_name (str): Its name in the owning model.
    """

    def __init__(self, moment, moment_name=''):
        self.moment = moment
        self.moment_name = moment_name
        label = f"{moment} ({moment_name})" if moment_name else f"{moment}"
        super().__init__(f"Moment {label} has no selected records.")


class DegenerateSurfaceError(OMSError):
    """
    Every allocation on the simplex has infinite estimated variance.
    """


class UndefinedMetricError(OMSError):
    """
    A metric cannot be computed from the supplied values.
    """


class EndOfRun(OMSError):
    """
    Signals that a policy has no further queries to make.
    """
