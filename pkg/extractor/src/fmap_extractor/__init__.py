"""Offline CNN feature-map extraction for the descriptor pipeline.

Runs vgg16 / caffe-geometry alexnet backbones over image folders, taps the
last convolution before its ReLU, and writes FMAP files plus dataset
manifests and planar pose tables - the byte formats the descriptor library
consumes.
"""

from .backbones import FEATURE_DIMS, WeightLoadError, load_backbone
from .extract import CANONICAL_RESOLUTION, ExtractionJob, extract
from .manifest import gps_to_local_xy, list_images, prepare_manifest

__version__ = "0.1.0"
