"""Exception hierarchy shared by every privshare module."""


class PrivShareError(Exception):
    """Base class for all errors raised by privshare."""


# -- ingest -----------------------------------------------------------------

class SchemaError(PrivShareError, ValueError):
    """Schema declaration violates a structural invariant."""


class MissingColumnError(PrivShareError, KeyError):
    def __init__(self, column, where="input"):
        self.column = column
        super().__init__(f"column {column!r} declared in schema is absent from {where}")

    def __str__(self):
        return self.args[0]


class ParseError(PrivShareError, ValueError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        super().__init__(message)


class EmptyCohortError(PrivShareError, ValueError):
    pass


class UnknownIdError(PrivShareError, KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        shown = self.ids[:10]
        super().__init__(f"record ids not in cohort: {shown}{' ...' if len(self.ids) > 10 else ''}")

    def __str__(self):
        return self.args[0]


class CohortIOError(PrivShareError, OSError):
    pass


# -- risk -------------------------------------------------------------------

class InvalidTauError(PrivShareError, ValueError):
    pass


class NoSensitiveAttributesError(PrivShareError, ValueError):
    pass


class EmptyInputError(PrivShareError, ValueError):
    pass


class ZeroBaselineError(PrivShareError, ZeroDivisionError):
    pass


# -- anonymizer -------------------------------------------------------------

class CohortTooSmallError(PrivShareError, ValueError):
    pass


class DiversityInfeasibleError(PrivShareError, ValueError):
    pass


# -- psm / ml ---------------------------------------------------------------

class SingleClassError(PrivShareError, ValueError):
    pass


class NoCasesError(PrivShareError, ValueError):
    pass


class EmptyFeatureSetError(PrivShareError, ValueError):
    pass


class LengthMismatchError(PrivShareError, ValueError):
    pass


# -- stats ------------------------------------------------------------------

class EmptySampleError(PrivShareError, ValueError):
    pass


class TooFewSamplesError(PrivShareError, ValueError):
    pass


class DegenerateVarianceError(PrivShareError, ValueError):
    pass


class DegeneratePoolError(PrivShareError, ValueError):
    pass


# -- pipeline ---------------------------------------------------------------

class InvalidSpecError(PrivShareError, ValueError):
    pass


class StageError(PrivShareError, RuntimeError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class ConfigError(PrivShareError, ValueError):
    pass
