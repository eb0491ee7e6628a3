#!/usr/bin/env python3
"""Dump a torchvision backbone state_dict to the STMW binary format.

Usage:
    python tools/export_backbone.py vgg19 vgg19.stmw
    python tools/export_backbone.py resnet34 resnet34.stmw --dtype f64

The C++ loader keys tensors by their state_dict names, so no renaming happens
here. Requires torch + torchvision (not needed at runtime).
"""
import argparse
import struct

MODELS = ["vgg19", "resnet34", "resnet50", "mobilenet_v2"]


def export(state_dict, path, dtype):
    tensors = {k: v for k, v in state_dict.items()
               if v.dtype.is_floating_point and "num_batches_tracked" not in k}
    with open(path, "wb") as f:
        f.write(b"STMW")
        f.write(struct.pack("<II", 1, len(tensors)))
        for name, tensor in tensors.items():
            data = tensor.detach().cpu().double() if dtype == "f64" else tensor.detach().cpu().float()
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BI", 1 if dtype == "f64" else 0, data.dim()))
            for d in data.shape:
                f.write(struct.pack("<Q", d))
            f.write(data.numpy().tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("model", choices=MODELS + ["mobilenetv2"])
    parser.add_argument("output")
    parser.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = parser.parse_args()

    import torchvision.models as models

    name = "mobilenet_v2" if args.model == "mobilenetv2" else args.model
    net = getattr(models, name)(weights="IMAGENET1K_V1")
    export(net.state_dict(), args.output, args.dtype)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
