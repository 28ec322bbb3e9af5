"""Weight export for the anomaly-detection engine.

Takes pretrained hybrid-encoder checkpoints (torch state_dicts) and
produces the binary tensor containers the engine loads, with the
architecture config embedded in the metadata. Also emits reference
feature-map fixtures so other encoder implementations can verify
numeric parity against the torch reference.
"""

from .architecture import (
    Architecture,
    StageSpec,
    available_architectures,
    named_architecture,
)
from .container import read_container, write_container
from .convert import ExportManifest, convert_checkpoint, load_checkpoint_tensors
from .errors import ArchitectureError, ContainerError, ConvertError, ExportError
from .fixtures import FixtureManifest, emit_fixtures, load_model
from .mapping import (
    MapEntry,
    generate_mapping,
    format_table,
    packaged_table,
    parse_table,
    partition_checkpoint_keys,
)
from .model import ImageEncoder

__version__ = "0.1.0"
