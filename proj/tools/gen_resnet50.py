#!/usr/bin/env python3
"""Writes the ResNet-50 v1.5 topology in the fuseconv model format.

v1.5 puts the stride-2 downsampling on the 3x3 convolution of each
bottleneck (v1 puts it on the first 1x1).

usage: gen_resnet50.py [OUT] [--batch N] [--seed N]
"""

import argparse
import sys

STAGES = [(64, 3), (128, 4), (256, 6), (512, 3)]
EXPANSION = 4


def conv_bn(lines, name, src, k, s, p, out, relu=True):
    lines.append(f"{name}_conv conv in={src} k={k} s={s} p={p} out={out}")
    lines.append(f"{name}_bn batchnorm in={name}_conv")
    if relu:
        lines.append(f"{name}_relu relu in={name}_bn")
        return f"{name}_relu"
    return f"{name}_bn"


def build(batch, seed):
    lines = [
        "# ResNet-50 v1.5, 224x224x3 input, 1000 classes.",
        "# Generated by tools/gen_resnet50.py; edit the script, not this file.",
        "",
        f"@batch {batch}",
        f"@seed {seed}",
        "",
        "input input h=224 w=224 c=3",
    ]
    x = conv_bn(lines, "stem", "input", 7, 2, 3, 64)
    lines.append(f"stem_pool pool in={x} mode=max k=3 s=2 p=1")
    x = "stem_pool"

    for si, (width, blocks) in enumerate(STAGES, start=1):
        lines.append("")
        lines.append(f"# stage {si}: {blocks} bottlenecks, width {width}")
        for bi in range(blocks):
            name = f"s{si}b{bi}"
            stride = 2 if bi == 0 and si > 1 else 1
            a = conv_bn(lines, f"{name}_a", x, 1, 1, 0, width)
            b = conv_bn(lines, f"{name}_b", a, 3, stride, 1, width)
            c = conv_bn(lines, f"{name}_c", b, 1, 1, 0, width * EXPANSION, relu=False)
            if bi == 0:
                shortcut = conv_bn(lines, f"{name}_proj", x, 1, stride, 0, width * EXPANSION, relu=False)
            else:
                shortcut = x
            lines.append(f"{name}_add add in={c},{shortcut}")
            lines.append(f"{name}_relu relu in={name}_add")
            x = f"{name}_relu"

    lines.append("")
    lines.append(f"gap pool in={x} mode=avg global=1")
    lines.append("fc dense in=gap out=1000")
    return "\n".join(lines) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", nargs="?", default="-")
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    text = build(args.batch, args.seed)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as f:
            f.write(text)


if __name__ == "__main__":
    main()
