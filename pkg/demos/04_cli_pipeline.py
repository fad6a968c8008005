"""The whole pipeline through the command-line surface.

Builds synthetic alexnet-geometry feature-map files, then drives
train -> encode -> match -> gt -> eval exactly as an operator would,
inside a temporary directory.

    python demos/04_cli_pipeline.py
"""

import tempfile
from pathlib import Path

import numpy as np

from placedesc import FeatureMapSet, write_fmap
from placedesc.cli import main

rng = np.random.default_rng(11)


def synthetic_fmaps(n, prefix):
    # Slowly drifting smooth maps so neighboring frames are similar.
    yy, xx = np.meshgrid(np.linspace(0, 1, 28), np.linspace(0, 1, 38), indexing="ij")
    base = np.stack([np.sin(2 * np.pi * (yy + xx)), np.cos(2 * np.pi * (yy - xx))])
    chan = rng.normal(size=(2, 256))
    coef = np.cumsum(rng.normal(size=(n, 2)) * 0.5, axis=0) + rng.normal(size=2)
    maps = np.einsum("nk,kc,khw->nchw", coef, chan, base).astype(np.float32)
    return FeatureMapSet("alexnet", [f"{prefix}_{i:03d}" for i in range(n)], maps)


def run(*argv):
    argv = [str(a) for a in argv]
    print(f"\n$ placedesc {' '.join(argv)}")
    code = main(argv)
    assert code == 0, f"exit code {code}"


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    write_fmap(tmp / "train.fmap", synthetic_fmaps(16, "trn"))
    write_fmap(tmp / "refs.fmap", synthetic_fmaps(24, "ref"))
    write_fmap(tmp / "val.fmap", synthetic_fmaps(4, "val"))
    print(f"wrote synthetic FMAP files under {tmp}")

    run("train", "--features", tmp / "train.fmap", "--val", tmp / "val.fmap",
        "--backbone", "alexnet", "--d3", "8", "--d1", "8", "--d2", "8",
        "--batch", "8", "--epochs", "3", "--seed", "0", "--out", tmp / "run")

    run("encode", "--checkpoint", tmp / "run" / "model.cae",
        "--features", tmp / "refs.fmap", "--out", tmp / "refs.dvec")
    # A revisit of the same route: reuse the reference maps as queries.
    run("encode", "--checkpoint", tmp / "run" / "model.cae",
        "--features", tmp / "refs.fmap", "--out", tmp / "queries.dvec")

    run("match", "--queries", tmp / "queries.dvec", "--references", tmp / "refs.dvec",
        "--k", "3", "--out", tmp / "matches.csv")
    print("first match rows:")
    for line in (tmp / "matches.csv").read_text().splitlines()[:4]:
        print(f"  {line}")

    # Frame-window ground truth over the aligned traverses.
    (tmp / "manifest.csv").write_text(
        "".join(f"ref_{i:03d}\n" for i in range(24))
    )
    run("gt", "--protocol", "frames", "--query-manifest", tmp / "manifest.csv",
        "--ref-manifest", tmp / "manifest.csv", "--window", "2",
        "--out", tmp / "gt.csv")

    run("eval", "--queries", tmp / "queries.dvec", "--references", tmp / "refs.dvec",
        "--gt", tmp / "gt.csv", "--out", tmp / "report")
    print("\nreport directory:")
    for path in sorted((tmp / "report").iterdir()):
        print(f"  {path.name}")
