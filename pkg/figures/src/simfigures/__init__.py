"""Figure rendering for marketsim experiment artifacts."""

from .render import (
    FIGURE_KINDS,
    ArtifactSet,
    FigureSpec,
    MissingInputError,
    SchemaError,
    render_figures,
)

__all__ = [
    "FIGURE_KINDS",
    "ArtifactSet",
    "FigureSpec",
    "MissingInputError",
    "SchemaError",
    "render_figures",
]
__version__ = "0.1.0"
