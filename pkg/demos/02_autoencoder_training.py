"""Train the autoencoder on synthetic feature maps and emit descriptors.

Uses a reduced geometry (the canonical vgg16/alexnet specs work the same
way, just bigger) to show the full loop: build, train by reconstruction,
watch the loss fall, encode unit descriptors, checkpoint round trip.

    python demos/02_autoencoder_training.py
"""

import tempfile
from pathlib import Path

import numpy as np

from placedesc import (
    ArchSpec,
    TrainConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)

rng = np.random.default_rng(7)

print("== architecture ==")
for factory, d3 in ((ArchSpec.vgg16, 256), (ArchSpec.vgg16, 128), (ArchSpec.alexnet, 256)):
    spec = factory(d3=d3)
    print(
        f"{spec.backbone:8s} d3={d3:3d}: input {spec.input_dims} -> "
        f"code {spec.code_dims} -> descriptor length {spec.flat_dim}"
    )

spec = ArchSpec(
    "custom", (32, 14, 20), d1=32, d2=32, d3=64,
    blocks=(((3, 3), (1, 1)), ((4, 4), (2, 2)), ((3, 4), (2, 2))),
)
print(f"\nreduced demo spec: input {spec.input_dims} -> code {spec.code_dims}")

# Synthetic "feature maps": smooth low-rank patterns, like the structured
# activations a frozen backbone would produce.
yy, xx = np.meshgrid(np.linspace(0, 1, 14), np.linspace(0, 1, 20), indexing="ij")
spatial = np.stack([np.sin(2 * np.pi * (yy + xx)), np.cos(2 * np.pi * (yy - xx))])
channel = rng.normal(size=(2, 32))
coef = rng.normal(size=(16, 2))
maps = np.einsum("nk,kc,khw->nchw", coef, channel, spatial).astype(np.float32)
train_maps, val_maps = maps[:12], maps[12:]

model = build_model(spec, seed=42)
_, initial = model.reconstruct(train_maps)
print(f"\nuntrained reconstruction loss: {initial:.4f}")

log = train(
    model, train_maps, val_maps,
    TrainConfig(lr=0.001, batch_size=4, epochs=40, seed=1),
)
print("epoch  train_loss  val_loss")
for row in log[::8] + [log[-1]]:
    print(f"{row['epoch']:5d}  {row['train_loss']:.6f}    {row['val_loss']:.6f}")

descriptors = model.encode(val_maps)
norms = np.linalg.norm(descriptors, axis=1)
print(f"\ndescriptors: shape {descriptors.shape}, norms {norms}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.cae"
    path.write_bytes(save_checkpoint(model))
    clone = load_checkpoint(path.read_bytes())
    same = np.array_equal(clone.encode(val_maps), descriptors)
    print(f"checkpoint: {path.stat().st_size} bytes, reload encodes identically: {same}")
