"""Radio advertisement detection over windowed transcription and text classification."""

from .errors import RaddetError
from .timeline import Label, Theme, Timeline, majority_label, overlap_ms, parse_annotations
from .windowing import Segmentation, WindowGrid, build_grid

__version__ = "0.1.0"

__all__ = [
    "Label",
    "RaddetError",
    "Segmentation",
    "Theme",
    "Timeline",
    "WindowGrid",
    "build_grid",
    "majority_label",
    "overlap_ms",
    "parse_annotations",
    "__version__",
]
