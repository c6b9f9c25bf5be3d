#!/usr/bin/env python3
"""Convert torchvision's ImageNet VGG-19 into the snst weight container.

Needs torch + torchvision and network access for the first download:

    python3 scripts/fetch_vgg19.py --out models/vgg19.ckpt
    export SNST_EXTRACTOR=models/vgg19.ckpt
"""
import argparse
import hashlib
import json
import struct

import numpy as np

# conv layer names in order, with their index in torchvision's vgg19().features
LAYERS = [
    ("conv1_1", 0), ("conv1_2", 2),
    ("conv2_1", 5), ("conv2_2", 7),
    ("conv3_1", 10), ("conv3_2", 12), ("conv3_3", 14), ("conv3_4", 16),
    ("conv4_1", 19), ("conv4_2", 21), ("conv4_3", 23), ("conv4_4", 25),
    ("conv5_1", 28),
]

MAGIC = b"SNSTCKPT"
VERSION = 1


def write_container(path, meta, arrays):
    entries, blobs, offset = [], [], 0
    for name, a in arrays:
        a = np.ascontiguousarray(a, dtype="<f4")
        raw = a.tobytes()
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "dtype": "float32",
            "offset": offset,
            "length": int(a.size),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "format": "snst-weights",
        "version": VERSION,
        "meta": meta,
        "arrays": entries,
        "payload_bytes": offset,
    }).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    from torchvision.models import vgg19, VGG19_Weights

    features = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).features
    arrays = []
    for name, idx in LAYERS:
        conv = features[idx]
        arrays.append((name + ".weight", conv.weight.detach().cpu().numpy()))  # OIHW
        arrays.append((name + ".bias", conv.bias.detach().cpu().numpy()))
    meta = {
        "kind": "perceptual-extractor",
        "layout": "vgg19",
        "width_divisor": 1,
        "mean": [0.485, 0.456, 0.406],
        "std": [0.229, 0.224, 0.225],
        "source": "torchvision IMAGENET1K_V1",
    }
    write_container(args.out, meta, arrays)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
