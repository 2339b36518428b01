from typing import List, Tuple


class CongestError(Exception):
    pass


class SchemaError(CongestError, ValueError):
    """Raised by record validation. ``errors`` lists every (field path, message) pair."""

    def __init__(self, errors: List[Tuple[str, str]], record: str = ""):
        self.errors = list(errors)
        self.record = record
        lines = [f"{path}: {msg}" for path, msg in self.errors]
        head = f"invalid {record}" if record else "invalid record"
        super().__init__(head + "\n  " + "\n  ".join(lines))

    def prefixed(self, prefix: str) -> "SchemaError":
        return SchemaError([(prefix + (p if p.startswith("[") else "." + p) if p else prefix, m) for p, m in self.errors], self.record)


class InvalidActionError(CongestError, ValueError):
    pass


class BudgetExceededError(CongestError):
    def __init__(self, what: str, required: int, budget: int):
        self.required = int(required)
        self.budget = int(budget)
        super().__init__(f"{what}: enumeration needs {required} entries, budget is {budget}")


class InvariantViolation(CongestError, AssertionError):
    pass


class NoStrictEquilibriumError(CongestError):
    pass


class TraceIOError(CongestError, OSError):
    def __init__(self, path: str, err: Exception):
        self.path = path
        super().__init__(f"{path}: {err}")


# Process exit codes used by the command line service.
EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_BUDGET = 4
EXIT_IO = 5
EXIT_INVARIANT = 6


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, SchemaError):
        return EXIT_SCHEMA
    if isinstance(exc, BudgetExceededError):
        return EXIT_BUDGET
    if isinstance(exc, (TraceIOError, FileNotFoundError, PermissionError)):
        return EXIT_IO
    if isinstance(exc, InvariantViolation):
        return EXIT_INVARIANT
    if isinstance(exc, (InvalidActionError, NoStrictEquilibriumError)):
        return EXIT_SCHEMA
    return EXIT_OTHER
