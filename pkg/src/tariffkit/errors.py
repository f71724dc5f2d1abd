"""Exception types mapped onto CLI exit codes."""


class TariffkitError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(TariffkitError):
    """Malformed or inconsistent input data (validation failure)."""


class DegenerateDataError(TariffkitError):
    """Data cannot support the requested operation (e.g. k clusters on identical rows)."""


class InfeasibleError(TariffkitError):
    """An optimization problem has no feasible point."""


class SolverError(TariffkitError):
    """A solver failed to reach an acceptable solution."""
