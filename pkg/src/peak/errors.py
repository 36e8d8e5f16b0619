"""Exception taxonomy shared across the framework.

Every error carries a short machine-readable code so the CLI can print
`PEAK_ERROR <code> <message>` lines and the HTTP API can map codes to
status codes without string matching.
"""

from __future__ import annotations


class PeakError(Exception):
    """Base class for all framework errors."""

    code = "internal"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# --- specification language ---------------------------------------------

class SpecSyntaxError(PeakError):
    code = "spec-syntax"

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        if line:
            message = f"{line}:{col}: {message}"
        super().__init__(message)


class SpecNameError(SpecSyntaxError):
    code = "spec-name"


class SpecTypeError(SpecSyntaxError):
    code = "spec-type"


class EvaluationError(PeakError):
    code = "spec-eval"


class DivisionByZero(EvaluationError):
    code = "div-by-zero"


class UnboundName(EvaluationError):
    code = "unbound-name"


# --- kernel context -------------------------------------------------------

class PlaceholderError(PeakError):
    code = "placeholder"


class UnknownPlaceholder(PlaceholderError):
    code = "unknown-placeholder"


class OrphanPlaceholder(PlaceholderError):
    code = "orphan-placeholder"


class OrphanDeclaration(PlaceholderError):
    code = "orphan-declaration"


class MissingTuningValue(PeakError):
    code = "missing-tuning-value"


class ContextError(PeakError):
    code = "bad-context"


# --- backend runtime ------------------------------------------------------

class UnsupportedDtype(PeakError):
    code = "unsupported-dtype"


class ToolchainMissing(PeakError):
    code = "toolchain-missing"


class CompileFailure(PeakError):
    """Compilation of a driver failed; stderr is fed back to retry loops."""

    code = "compile-failure"

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class ProtocolViolation(PeakError):
    code = "protocol-violation"


class UnknownBackend(PeakError):
    code = "unknown-backend"


# --- transform engine -----------------------------------------------------

class ManifestError(PeakError):
    code = "manifest"


class MissingSnippet(PeakError):
    code = "missing-snippet"


class BadPlaceholder(PeakError):
    code = "bad-placeholder"


class ExtractionFailure(PeakError):
    code = "extraction-failure"


class MockFixtureMissing(PeakError):
    code = "mock-fixture-missing"


class LlmClientError(PeakError):
    code = "llm-client"


class UnknownTransformation(PeakError):
    code = "unknown-transformation"


class TransformationNotApplicable(PeakError):
    code = "transformation-not-applicable"


# --- validation -----------------------------------------------------------

class SeedExecutionFailure(PeakError):
    code = "seed-execution"


class LengthMismatch(PeakError):
    code = "length-mismatch"


class IncompatibleReference(PeakError):
    code = "incompatible-reference"


class DuplicatePlugin(PeakError):
    code = "duplicate-plugin"


# --- performance evaluation ------------------------------------------------

class NoValidConfiguration(PeakError):
    code = "no-valid-configuration"


class IncomparableReports(PeakError):
    code = "incomparable-reports"


class PluginFailure(PeakError):
    code = "plugin-failure"


# --- workflow store ---------------------------------------------------------

class UnknownParent(PeakError):
    code = "unknown-parent"


class UnknownCheckpoint(PeakError):
    code = "unknown-checkpoint"


class UnknownRef(PeakError):
    code = "unknown-ref"


class DigestCollisionConflict(PeakError):
    code = "digest-collision"


class StoreLocked(PeakError):
    code = "store-locked"


class MissingPerfData(PeakError):
    code = "missing-perf-data"


# --- service ----------------------------------------------------------------

class ConfigError(PeakError):
    code = "config"
