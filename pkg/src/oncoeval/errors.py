"""Exception types shared across the pipeline, mapped to CLI exit codes."""


class ValidationError(ValueError):
    """Bad inputs, broken invariants, or malformed files. Exit code 1."""


class BackendError(RuntimeError):
    """Generation or embedding endpoint failure. Exit code 3."""
