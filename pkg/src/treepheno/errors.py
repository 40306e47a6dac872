"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class DegenerateGeometry(PipelineError):
    pass


class EmptyResult(PipelineError):
    pass


class RasterizationOverflow(PipelineError):
    pass


class CorruptFile(PipelineError):
    pass


class ShapeMismatch(PipelineError):
    pass


class NonFinite(PipelineError):
    pass


class InsufficientData(PipelineError):
    pass


class EmptyReference(PipelineError):
    pass


class SizeMismatch(PipelineError):
    pass


class DegenerateData(PipelineError):
    pass


class InvalidK(PipelineError):
    pass


class EmptyGraph(PipelineError):
    pass


class NoPlateau(PipelineError):
    pass


class MissingArtifact(PipelineError):
    """An upstream artifact is absent; ``command`` names the step that makes it."""

    def __init__(self, path, command):
        super().__init__(f"missing artifact {path}; run `treepheno {command}` first")
        self.path = path
        self.command = command
