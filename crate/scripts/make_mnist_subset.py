"""Build the desk-scale MNIST subset shipped in data/mnist-desk.

Source: the `mnist` npm package (10,000 MNIST digits stored as JSON with
pixel values v = byte/255 rounded to 3 decimals). Bytes are recovered as
round(255 * v) and written back out in IDX format.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist-desk
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN, TEST = 2000, 500


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        for i in range(0, len(flat), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i : i + 784])
            samples.append((pixels, digit))
    random.Random(20200521).shuffle(samples)
    dst.mkdir(parents=True, exist_ok=True)
    write(dst, "train", samples[:TRAIN])
    write(dst, "t10k", samples[TRAIN : TRAIN + TEST])


def write(dst: Path, prefix: str, samples) -> None:
    with open(dst / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with open(dst / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
