"""Error taxonomy shared by the library and the CLI.

Every error carries a short machine-parseable tag and the process exit code
the CLI maps it to: 2 for argument errors, 3 for IO and file-format errors,
4 for numerical failures.
"""

from __future__ import annotations


class GsctError(Exception):
    """Base class; subclasses pin the exit code and a default tag."""

    exit_code = 1
    tag = "ERROR"

    def __init__(self, message: str, tag: str | None = None):
        super().__init__(message)
        if tag is not None:
            self.tag = tag

    def one_line(self) -> str:
        return f"{self.tag}: {self}"


class ArgumentError(GsctError):
    """Bad user-supplied value or violated operation precondition."""

    exit_code = 2
    tag = "ARG_INVALID"


class IoError(GsctError):
    """Missing, unreadable, or unwritable files; truncated payloads."""

    exit_code = 3
    tag = "IO_ERROR"


class FormatError(IoError):
    """Structurally invalid file content (bad magic, bad header field)."""

    tag = "FORMAT_INVALID"


class NumericalError(GsctError):
    """Divergence, non-finite iterates, and similar runtime failures."""

    exit_code = 4
    tag = "NUMERICAL_FAILURE"
