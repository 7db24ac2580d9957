#!/usr/bin/env python3
"""Export VGG16 conv stages 1-3 into a stamps tensor archive.

The archive can be passed to training as `perceptual.weights=<path>` together
with `perceptual.width_divisor=1` and `perceptual.imagenet_normalize=true`.
"""

import argparse
import json
import struct
from pathlib import Path

import torch
import torchvision

MAGIC = b"STMPARC1"
# features index of each conv in VGG16, grouped by pooling stage
STAGES = [[0, 2], [5, 7], [10, 12, 14]]


def write_archive(path: Path, tensors: dict, meta: dict) -> None:
    index, payload, offset = [], [], 0
    for name, t in tensors.items():
        data = t.detach().to(torch.float32).contiguous().numpy().tobytes()
        index.append({"name": name, "dtype": "f32", "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
        payload.append(data)
        offset += len(data)
    header = json.dumps({**meta, "tensors": index}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for data in payload:
            f.write(data)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--state-dict", type=Path, help="local VGG16 state dict instead of the torchvision download")
    ap.add_argument("--random", action="store_true", help="export untrained weights (for testing the pipeline)")
    args = ap.parse_args()

    if args.random:
        model = torchvision.models.vgg16(weights=None)
    elif args.state_dict:
        model = torchvision.models.vgg16(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        model = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1)

    tensors = {}
    for s, convs in enumerate(STAGES, start=1):
        for k, idx in enumerate(convs):
            conv = model.features[idx]
            tensors[f"stage{s}_conv{k}.weight"] = conv.weight
            tensors[f"stage{s}_conv{k}.bias"] = conv.bias
    source = "random" if args.random else str(args.state_dict or "torchvision:IMAGENET1K_V1")
    write_archive(args.out, tensors, {"kind": "perceptual", "arch": "vgg16", "source": source})
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
