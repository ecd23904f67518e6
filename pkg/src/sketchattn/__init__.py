"""sketchattn: vector sketch recognition with learned per-point attention.

An RNN scores every point of a vector sketch, a differentiable line
rasterizer turns (points, attentions) into an intensity image, and a CNN
classifies it; gradients flow from the classifier back through the
rasterizer into the RNN, so the whole pipeline trains end to end.
"""

__version__ = "0.1.0"

from . import errors, geometry, ingest, net, pipeline, raster, simplify

__all__ = ["errors", "geometry", "ingest", "net", "pipeline", "raster", "simplify", "__version__"]
