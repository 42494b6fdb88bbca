"""Exception hierarchy shared across the package.

Every error raised by this package derives from SeallinkError so callers
can catch one type at the boundary.  Specific subclasses live in the
module that raises them; only the truly cross-cutting ones are here.
"""


class SeallinkError(Exception):
    """Base class for all errors raised by seallink."""


class IoFailure(SeallinkError):
    """A filesystem or socket operation failed mid-way; no partial state kept."""
