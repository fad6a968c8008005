"""Backbone feature extractors, cut at the last convolution before its ReLU.

Two geometries are supported for 640x480 inputs:

* vgg16 - torchvision's VGG16 through conv5_3; emits (512, 30, 40).
* alexnet - the caffe/matconvnet AlexNet layout (96-256-384-384-256
  channels, no padding on conv1); emits (256, 28, 38). torchvision's
  AlexNet pads conv1 and lands on 29x39, so it cannot reproduce these
  dimensions.

``weights`` is one of:
* "none"       - seeded random initialization (deterministic across runs;
                 for pipeline testing only, the features carry no semantics),
* "pretrained" - torchvision's ImageNet weights (vgg16 only; needs network),
* a file path  - a torch ``state_dict`` matching the module.
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models


class WeightLoadError(RuntimeError):
    """Backbone weights could not be obtained; extraction cannot proceed."""


class CaffeAlexNetFeatures(nn.Sequential):
    """Caffe-geometry AlexNet through conv5, pre-ReLU."""

    def __init__(self):
        super().__init__(
            nn.Conv2d(3, 96, kernel_size=11, stride=4),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(kernel_size=3, stride=2),
            nn.Conv2d(96, 256, kernel_size=5, padding=2, groups=2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(kernel_size=3, stride=2),
            nn.Conv2d(256, 384, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(384, 384, kernel_size=3, padding=1, groups=2),
            nn.ReLU(inplace=True),
            nn.Conv2d(384, 256, kernel_size=3, padding=1, groups=2),
        )


def _vgg16_features(weights: str) -> nn.Module:
    if weights == "pretrained":
        try:
            backbone = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise WeightLoadError(f"could not load pretrained vgg16 weights: {exc}") from exc
    else:
        torch.manual_seed(0)
        backbone = models.vgg16(weights=None)
    # features[28] is conv5_3; slicing at :29 stops before its ReLU.
    return backbone.features[:29]


def _alexnet_features(weights: str) -> nn.Module:
    if weights == "pretrained":
        raise WeightLoadError(
            "no built-in pretrained weights for the caffe-geometry alexnet; "
            "pass a state_dict file instead"
        )
    torch.manual_seed(0)
    return CaffeAlexNetFeatures()


def load_backbone(backbone: str, weights: str = "pretrained") -> nn.Module:
    """Build the requested feature extractor in eval mode on the CPU."""
    if backbone == "vgg16":
        module = _vgg16_features(weights)
    elif backbone == "alexnet":
        module = _alexnet_features(weights)
    else:
        raise ValueError(f"unknown backbone {backbone!r}")
    if weights not in ("none", "pretrained"):
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            module.load_state_dict(state)
        except Exception as exc:
            raise WeightLoadError(f"could not load weights from {weights}: {exc}") from exc
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


# Canonical output dims (c, h, w) for 640x480 input.
FEATURE_DIMS = {
    "vgg16": (512, 30, 40),
    "alexnet": (256, 28, 38),
}

# torchvision ImageNet normalization (RGB, 0..1 scale).
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# caffe/matconvnet convention: BGR, 0..255 scale, mean subtraction only.
CAFFE_BGR_MEAN = (104.0, 117.0, 123.0)


def preprocess(batch: torch.Tensor, backbone: str) -> torch.Tensor:
    """Normalize a (n, 3, h, w) float RGB batch in [0, 1] for the backbone."""
    if backbone == "vgg16":
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        return (batch - mean) / std
    bgr = batch.flip(1) * 255.0
    mean = torch.tensor(CAFFE_BGR_MEAN).view(1, 3, 1, 1)
    return bgr - mean
