"""Exception hierarchy. Each class carries the CLI exit code of its category."""


class WetlmError(Exception):
    exit_code = 1


class ConfigError(WetlmError):
    exit_code = 2


class FormatError(WetlmError):
    """Malformed input file (collection, embeddings, snapshot, qrels, run)."""

    exit_code = 3


class IngestError(FormatError):
    def __init__(self, message: str, offset: int, docno: str | None = None):
        where = f"byte {offset}"
        if docno:
            where += f", near DOCNO {docno!r}"
        super().__init__(f"{message} ({where})")
        self.offset = offset
        self.docno = docno


class EmbeddingFormatError(FormatError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class EvaluationError(WetlmError):
    exit_code = 4
