"""plate-bench: benchmark harness for prompt-driven license plate recognition."""

__version__ = "0.1.0"

from .labels import (  # noqa: F401
    ALPHABET,
    MALAYSIAN_SINGLE_LINE,
    MALAYSIAN_TWO_LINE,
    PlateFormat,
    PlateLabel,
    PlateLayout,
    normalize_label,
    plate_char,
)
from .manifest import (  # noqa: F401
    DatasetManifest,
    ImageRecord,
    ManifestError,
    load_manifest,
    save_manifest,
)
