"""shapexplore: coupled embedding/shape latent spaces for guided 3D shape
exploration over a procedural furniture family.

The pipeline: generate shapes and their line renderings (`procgen`,
`dataset`), train a frozen shape autoencoder and a frozen joint
sketch/text embedding (`spaces`), couple the two spaces with a trained
mapper (`mapper`), refine a sketch-derived starting code against the
true shape (`coopt`), then trace linear directions in embedding space
(`explore`) and measure the outcomes (`metrics`). `cli` and `service`
expose the whole thing as commands and an HTTP session API.
"""

__version__ = "0.1.0"

from .errors import (
    ArgumentError,
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    ShapeXploreError,
    StateError,
    UsageError,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "DataError",
    "FormatError",
    "NumericError",
    "ShapeXploreError",
    "StateError",
    "UsageError",
    "__version__",
]
