"""Exception hierarchy.

Everything raised on purpose derives from :class:`SketchKGError`.  Errors that
describe bad input (files, records, arguments) additionally derive from
:class:`InputError`; the CLI maps those to exit code 1.
"""


class SketchKGError(Exception):
    """Base class for all package errors."""


class InputError(SketchKGError, ValueError):
    """The caller supplied data that cannot be processed."""


class MalformedJson(InputError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class SchemaViolation(InputError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class EmptyGraph(InputError):
    pass


class PreconditionViolated(InputError):
    pass


class DimMismatch(InputError):
    pass


class DuplicateId(InputError):
    def __init__(self, item_id):
        self.item_id = item_id
        super().__init__(f"duplicate id {item_id!r}")


class ZeroVector(InputError):
    def __init__(self, item_id=None):
        self.item_id = item_id
        super().__init__("zero vector" if item_id is None else f"zero vector for id {item_id!r}")


class IoFailure(InputError, OSError):
    pass


class BadMagic(InputError):
    pass


class UnsupportedVersion(InputError):
    pass


class TruncatedFile(InputError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class EmptyNegatives(InputError):
    pass


class InsufficientData(InputError):
    pass


class EmptyImage(InputError):
    pass


class DegenerateLabels(InputError):
    pass


class InvalidThresholds(InputError):
    pass


class MissingTemplate(InputError):
    pass


class NoReferences(InputError):
    pass


class EmptyRankings(InputError):
    pass


class MissingGroundTruth(InputError):
    def __init__(self, query_id):
        self.query_id = query_id
        super().__init__(f"no ground truth for query {query_id!r}")


class EmptyInput(InputError):
    pass


class UnknownSubcommand(InputError):
    pass
