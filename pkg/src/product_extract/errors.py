"""Exception hierarchy.

Every error carries a stable ``code`` used by the CLI for its
``error_code: message`` stderr line and by the HTTP service.
"""


class ProductExtractError(Exception):
    code = "Error"


# -- core ---------------------------------------------------------------

class MissingFile(ProductExtractError):
    code = "MissingFile"


class MalformedRow(ProductExtractError):
    code = "MalformedRow"

    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")


class DuplicateBrickCode(ProductExtractError):
    code = "DuplicateBrickCode"

    def __init__(self, brick_code):
        self.brick_code = brick_code
        super().__init__(f"duplicate brick_code {brick_code!r}")


class MalformedLine(ProductExtractError):
    code = "MalformedLine"

    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")


class UnknownCategory(ProductExtractError):
    code = "UnknownCategory"

    def __init__(self, record_id, label):
        self.record_id = record_id
        self.label = label
        super().__init__(f"record {record_id!r}: unknown category {label!r}")


class DuplicateId(ProductExtractError):
    code = "DuplicateId"

    def __init__(self, record_id):
        self.record_id = record_id
        super().__init__(f"duplicate record id {record_id!r}")


# -- extraction ---------------------------------------------------------

class NoProductFound(ProductExtractError):
    code = "NoProductFound"


class EmptyName(ProductExtractError):
    code = "EmptyName"


# -- fetching -----------------------------------------------------------

class FetchError(ProductExtractError):
    code = "FetchError"


class InvalidUrl(FetchError):
    code = "InvalidUrl"


class Timeout(FetchError):
    code = "Timeout"


class ConnectionFailed(FetchError):
    code = "ConnectionFailed"


class TooManyRedirects(FetchError):
    code = "TooManyRedirects"


class HttpError(FetchError):
    code = "HttpError"

    def __init__(self, status, url=""):
        self.status = status
        super().__init__(f"HTTP {status} for {url}" if url else f"HTTP {status}")


class BodyTooLarge(FetchError):
    code = "BodyTooLarge"


class NotHtml(FetchError):
    code = "NotHtml"


# -- classifier ---------------------------------------------------------

class EmptyDataset(ProductExtractError):
    code = "EmptyDataset"


class SingleClassDataset(ProductExtractError):
    code = "SingleClassDataset"


class VersionMismatch(ProductExtractError):
    code = "VersionMismatch"


class CorruptFile(ProductExtractError):
    code = "CorruptFile"


# -- evaluation / mapping -----------------------------------------------

class LengthMismatch(ProductExtractError):
    code = "LengthMismatch"


class EmptyInput(ProductExtractError):
    code = "EmptyInput"


class EmptySelection(ProductExtractError):
    code = "EmptySelection"

    def __init__(self, side):
        self.side = side
        super().__init__(f"{side} filter selects no labeled records")


class InvalidScenario(ProductExtractError):
    code = "InvalidScenario"


class MissingSourceCategory(ProductExtractError):
    code = "MissingSourceCategory"

    def __init__(self, record_id):
        self.record_id = record_id
        super().__init__(f"record {record_id!r} has no source_category")


class GoldMissing(ProductExtractError):
    code = "GoldMissing"

    def __init__(self, source):
        self.source = source
        super().__init__(f"no gold mapping for source category {source!r}")


class InvalidSpec(ProductExtractError):
    code = "InvalidSpec"
