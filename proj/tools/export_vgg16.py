"""Writes VGG16 conv1_1..conv3_3 weights as a tensor archive for --vgg-weights.

Usage:
  python tools/export_vgg16.py out.lbam                 # torchvision ImageNet weights (downloads)
  python tools/export_vgg16.py out.lbam --state-dict vgg16-397923af.pth
"""

import argparse
import json
import struct
import zlib

import numpy as np

LAYERS = ["conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3"]
# torchvision vgg16 `features` indices of those convolutions
INDICES = [0, 2, 5, 7, 10, 12, 14]


def load_state_dict(path):
    import torch
    if path:
        return torch.load(path, map_location="cpu")
    from torchvision.models import VGG16_Weights, vgg16
    return vgg16(weights=VGG16_Weights.IMAGENET1K_V1).state_dict()


def write_archive(path, tensors, metadata):
    body = bytearray(b"LBAMARC\0")
    body += struct.pack("<I", 1)
    meta = json.dumps(metadata).encode()
    body += struct.pack("<Q", len(meta)) + meta
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode()
        body += struct.pack("<I", len(encoded)) + encoded
        body += struct.pack("<BI", 0, arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += arr.tobytes()
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(body)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out")
    ap.add_argument("--state-dict", help="local torchvision vgg16 .pth file")
    args = ap.parse_args()
    sd = load_state_dict(args.state_dict)
    tensors = []
    for layer, idx in zip(LAYERS, INDICES):
        tensors.append((f"vgg16.{layer}.weight", sd[f"features.{idx}.weight"].numpy()))
        tensors.append((f"vgg16.{layer}.bias", sd[f"features.{idx}.bias"].numpy()))
    write_archive(args.out, tensors, {"source": "torchvision vgg16 IMAGENET1K_V1"})
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
