"""
PackAudit - Error types
Every failure the pipeline can report, each with a stable machine-readable code
"""

from typing import Optional


class PackAuditError(Exception):
    """Base class for all pipeline errors"""

    code = "PackAuditError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# Ingestion

class MalformedRow(PackAuditError, ValueError):
    code = "MalformedRow"

    def __init__(self, row_index: int, reason: str):
        super().__init__(f"row {row_index}: {reason}")
        self.row_index = row_index
        self.reason = reason


class UnknownAlarmCode(MalformedRow):
    code = "UnknownAlarmCode"

    def __init__(self, row_index: int, alarm_code: str):
        super().__init__(row_index, f"unknown alarm code {alarm_code!r}")
        self.alarm_code = alarm_code


class UnparseableDate(MalformedRow):
    code = "UnparseableDate"

    def __init__(self, row_index: int, value: str):
        super().__init__(row_index, f"unparseable date {value!r}")
        self.value = value


class EmptyRange(PackAuditError, ValueError):
    code = "EmptyRange"


# Configuration

class InvalidConfig(PackAuditError, ValueError):
    code = "InvalidConfig"


class ConfigInvalid(PackAuditError, ValueError):
    """Run configuration rejected before any output is touched"""
    code = "ConfigInvalid"


class MissingArtifact(PackAuditError):
    code = "MissingArtifact"


# Preprocessing

class AlphaOutOfRange(PackAuditError, ValueError):
    code = "AlphaOutOfRange"


class LengthMismatch(PackAuditError, ValueError):
    code = "LengthMismatch"


class EmptySeries(PackAuditError, ValueError):
    code = "EmptySeries"


class TooFewMinority(PackAuditError, ValueError):
    code = "TooFewMinority"


# Classifier

class SingleClassData(PackAuditError, ValueError):
    code = "SingleClassData"


class WidthMismatch(PackAuditError, ValueError):
    code = "WidthMismatch"


# Detectors

class DimensionMismatch(PackAuditError, ValueError):
    code = "DimensionMismatch"


class NonPositiveSigma(PackAuditError, ValueError):
    code = "NonPositiveSigma"


class NotConverged(PackAuditError):
    """SMO stopped at max_iter; the partially optimised model is attached"""
    code = "NotConverged"

    def __init__(self, kkt_violation: float, model: Optional[object] = None):
        super().__init__(f"KKT violation {kkt_violation:.3e} above tolerance")
        self.kkt_violation = kkt_violation
        self.model = model


class DegenerateData(PackAuditError, ValueError):
    code = "DegenerateData"


class SingularCovariance(PackAuditError, ValueError):
    code = "SingularCovariance"


class TooFewSamples(PackAuditError, ValueError):
    code = "TooFewSamples"


class DegenerateSubset(PackAuditError, ValueError):
    code = "DegenerateSubset"


# Streaming

class EmptyWindow(PackAuditError, ValueError):
    code = "EmptyWindow"


class EmptyInput(PackAuditError, ValueError):
    code = "EmptyInput"


class ProbabilityOutOfRange(PackAuditError, ValueError):
    code = "ProbabilityOutOfRange"


# Evaluation

class ZeroBaseline(PackAuditError, ValueError):
    code = "ZeroBaseline"


class TooFewGroups(PackAuditError, ValueError):
    code = "TooFewGroups"


class TooFewValues(PackAuditError, ValueError):
    code = "TooFewValues"


class MachineMismatch(PackAuditError, ValueError):
    code = "MachineMismatch"
