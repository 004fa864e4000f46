"""Exception hierarchy shared by the scoring pipeline."""


class GeoscoreError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(GeoscoreError, ValueError):
    """Invalid or non-finite geometry."""


class ExtentError(GeometryError):
    """Coordinates fall outside the validity window of the local projection."""


class ParseError(GeoscoreError, ValueError):
    """A document could not be decoded.

    ``offset`` is the byte (character) position reported by the decoder,
    or ``None`` when unknown.
    """

    def __init__(self, message, offset=None, source=None):
        self.offset = offset
        self.source = source
        where = []
        if source is not None:
            where.append(str(source))
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ValidationError(GeoscoreError, ValueError):
    """A feature decoded fine but violates the label schema."""

    def __init__(self, message, feature_index=None, source=None):
        self.feature_index = feature_index
        self.source = source
        where = []
        if source is not None:
            where.append(str(source))
        if feature_index is not None:
            where.append(f"feature {feature_index}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ConfigurationError(GeoscoreError, ValueError):
    """Bad parameters or conflicting inputs (duplicate tile ids, spacing <= 0, ...)."""


class NodeLookupError(GeoscoreError, KeyError):
    """A node id is not present in the graph."""
