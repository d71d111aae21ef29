"""Exception hierarchy. Every domain failure derives from ActionLedgerError."""

from __future__ import annotations


class ActionLedgerError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class TraceFormatError(ActionLedgerError):
    """A trace or label-map line could not be parsed or violates an invariant."""

    def __init__(self, message: str, lineno: int | None = None) -> None:
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class HeaderError(TraceFormatError):
    """Missing or unusable trace header (fatal for validation)."""


class DuplicateRecordError(ActionLedgerError):
    def __init__(self, key: tuple[int, str, str], message: str | None = None) -> None:
        self.key = key
        epoch, sample, component = key
        super().__init__(
            message
            or f"duplicate record (epoch={epoch}, sample={sample!r}, component={component!r})"
        )


class CoverageError(ActionLedgerError):
    def __init__(self, offenders: list[tuple[str, str]], total: int) -> None:
        self.offenders = offenders
        self.total = total
        shown = ", ".join(f"({s!r}, {c!r})" for s, c in offenders)
        more = f" and {total - len(offenders)} more" if total > len(offenders) else ""
        super().__init__(f"incomplete epoch coverage for {total} pair(s): {shown}{more}")


class UnknownComponentError(ActionLedgerError):
    def __init__(self, component: str, available: list[str]) -> None:
        self.component = component
        self.available = available
        super().__init__(
            f"unknown component {component!r}; available: {', '.join(available)}"
        )


class LabelError(ActionLedgerError):
    """Labels missing or inconsistent with the action table."""
