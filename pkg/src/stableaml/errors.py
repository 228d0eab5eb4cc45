"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit a
single parsable line. ``DataError`` subclasses map to exit code 2,
``NumericError`` subclasses to exit code 3.
"""


class AmlError(Exception):
    code = "error"


class DataError(AmlError):
    code = "data_error"


class NumericError(AmlError):
    code = "numeric_error"


class MalformedAddress(DataError, ValueError):
    code = "malformed_address"


class RowError(DataError, ValueError):
    code = "row_error"

    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class ParseAborted(DataError):
    code = "parse_aborted"

    def __init__(self, errors):
        self.errors = list(errors)
        first = self.errors[0] if self.errors else None
        super().__init__(f"{len(self.errors)} malformed rows exceed error budget (first: {first})")


class UnknownCategory(RowError):
    code = "unknown_category"


class UnknownClass(RowError):
    code = "unknown_class"


class ConflictingLabel(RowError):
    code = "conflicting_label"


class NodeNotFound(DataError, KeyError):
    code = "node_not_found"

    def __str__(self):
        return Exception.__str__(self)


class Undefined(DataError, ValueError):
    code = "undefined"


class ConfigError(DataError, ValueError):
    code = "config_error"


class ShapeError(DataError, ValueError):
    code = "shape_error"


class MissingFeatures(DataError, KeyError):
    code = "missing_features"

    def __str__(self):
        return Exception.__str__(self)


class StratifyError(DataError, ValueError):
    code = "stratify_error"


class FoldError(DataError, ValueError):
    code = "fold_error"


class LeakageError(DataError):
    code = "leakage"


class FormatError(DataError):
    code = "format_error"


class NotApplicable(AmlError, TypeError):
    code = "not_applicable"


class DegenerateLabels(NumericError):
    code = "degenerate_labels"


class DivergenceError(NumericError):
    code = "divergence"
