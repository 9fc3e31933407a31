"""Exception hierarchy shared across the library and the CLI.

The CLI maps these onto process exit codes: ValidationError -> 2,
FormatError -> 3, GuaranteeError -> 4.
"""


class VacpError(Exception):
    """Base class for all library errors."""


class ValidationError(VacpError):
    """A contract violation: bad configuration, inconsistent inputs,
    overlapping data splits, and similar caller mistakes."""


class EmptySupportError(ValidationError):
    """Every token was masked out; there is no support to normalize over."""


class TargetNotInSupportError(ValidationError):
    """The ground-truth token has zero probability under the scoring
    distribution (typically: masked out)."""

    def __init__(self, token_id: int, sample_id: str | None = None):
        self.token_id = token_id
        self.sample_id = sample_id
        where = f" (sample {sample_id!r})" if sample_id is not None else ""
        super().__init__(f"target token {token_id} not in support{where}")


class FormatError(VacpError):
    """A file could not be read or written: bad magic, truncation,
    out-of-range fields, version mismatch."""

    def __init__(self, message: str, *, path=None, offset: int | None = None):
        self.path = path
        self.offset = offset
        parts = [message]
        if path is not None:
            parts.append(f"file={path}")
        if offset is not None:
            parts.append(f"byte_offset={offset}")
        super().__init__(": ".join(str(p) for p in parts))


class GuaranteeError(VacpError):
    """A statistical guarantee check failed (mask misses ground-truth
    tokens, or a coverage bound was violated)."""
