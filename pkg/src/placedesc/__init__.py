"""Compact place descriptors from CNN feature maps.

A small numpy library: hand-rolled conv/deconv/norm/PReLU kernels with Adam,
a three-block convolutional autoencoder trained to reconstruct
layer-normalized feature maps, binary containers for feature maps and
descriptors, and an exact retrieval/evaluation suite (Recall@K, PR, AP,
L2-distance separation).
"""

import os as _os

# Honor the thread pin before numpy initializes its BLAS pools.
_threads = _os.environ.get("PLACEDESC_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import (
    ArchitectureError,
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    PlaceDescError,
    ShapeError,
)
from .nn import (
    LayerNormConfig,
    Param,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    l2_normalize,
    layernorm,
    layernorm_backward,
    mse_loss,
    prelu_backward,
    prelu_forward,
)
from .autoencoder import (
    CANONICAL_D3,
    ArchSpec,
    ConvAutoencoder,
    TrainConfig,
    build_model,
    encode,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
    train,
)
from .dataio import (
    DescriptorSet,
    FeatureMapSet,
    GroundTruth,
    PoseTable,
    build_ground_truth_frames,
    build_ground_truth_radius,
    load_pair_list,
    read_dvec,
    read_fmap,
    read_manifest,
    read_pose_csv,
    write_dvec,
    write_fmap,
    write_ground_truth_csv,
    write_manifest,
    write_pose_csv,
)
from .retrieval import (
    EvalReport,
    Histogram,
    MatchResult,
    PrPoint,
    average_precision,
    default_thresholds,
    evaluate,
    l2_distributions,
    pr_curve,
    recall_at_k,
    topk,
)

__version__ = "0.1.0"
