class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class ArchitectureError(ExportError):
    """Architecture description is malformed or unsupported."""


class ContainerError(ExportError):
    """Container file cannot be read or written."""


class ConvertError(ExportError):
    """Checkpoint contents do not match the target architecture."""
