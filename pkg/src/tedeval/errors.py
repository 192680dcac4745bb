"""Error taxonomy shared by the whole harness.

CLI exit-code mapping: ArgumentError/ConfigError -> usage (1),
ValidationError/FormatError/missing files -> input (2), NumericError -> 3.
"""


class HarnessError(Exception):
    """Base class for all harness errors."""


class ArgumentError(HarnessError):
    """A caller passed an argument that violates an operation's precondition."""


class ConfigError(HarnessError):
    """A configuration value is invalid (e.g. dim not divisible by heads)."""


class StateError(HarnessError):
    """An operation was attempted in a forbidden state (e.g. frozen weights)."""


class NumericError(HarnessError):
    """A numeric-domain failure: NaN/Inf produced, zero-norm vector, etc."""


class ValidationError(HarnessError):
    """A corpus record failed schema validation.

    Carries the offending record id and/or line number when known.
    """

    def __init__(self, message, record_id=None, line=None):
        parts = [message]
        if record_id is not None:
            parts.append(f"(record id={record_id})")
        if line is not None:
            parts.append(f"(line {line})")
        super().__init__(" ".join(parts))
        self.record_id = record_id
        self.line = line


class FormatError(HarnessError):
    """A binary file violates its format contract.

    ``code`` is one of: bad_magic, bad_version, bad_dtype, truncated,
    shape_mismatch, byte_order.
    """

    def __init__(self, code, message):
        super().__init__(f"[{code}] {message}")
        self.code = code
