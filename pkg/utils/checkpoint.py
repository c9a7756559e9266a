"""Binary checkpoint codec for networks.

Layout (little-endian): magic ``TBCK``, format version u16, network count
u16; per network a layer count u16, then per layer rows u32, cols u32, the
row-major float64 weights and the ``cols`` float64 biases.
"""
import logging
import struct
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"TBCK"
FORMAT_VERSION = 1

Layer = Tuple[np.ndarray, np.ndarray]


class CheckpointError(ValueError):
    """Raised for unreadable, truncated or mismatched checkpoint files."""


def encode(networks: Sequence) -> bytes:
    """Serialize objects exposing ``layers`` (a list of (weight, bias) pairs)."""
    chunks = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(networks))]
    for net in networks:
        layers = net.layers
        chunks.append(struct.pack("<H", len(layers)))
        for weight, bias in layers:
            rows, cols = weight.shape
            if bias.shape != (cols,):
                raise CheckpointError(f"bias {bias.shape} does not match weight {weight.shape}")
            chunks.append(struct.pack("<II", rows, cols))
            chunks.append(np.ascontiguousarray(weight, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {size} bytes at offset {self.offset}, file has {len(self.data)}"
            )
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> List[List[Layer]]:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("not a tabbin checkpoint (bad magic bytes)")
    version, count = reader.unpack("<HH")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    networks = []
    for _ in range(count):
        (n_layers,) = reader.unpack("<H")
        layers = []
        for _ in range(n_layers):
            rows, cols = reader.unpack("<II")
            weight = np.frombuffer(reader.take(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            bias = np.frombuffer(reader.take(8 * cols), dtype="<f8")
            layers.append((weight.astype(np.float64), bias.astype(np.float64)))
        networks.append(layers)
    if reader.offset != len(data):
        raise CheckpointError(f"{len(data) - reader.offset} trailing bytes after the last network")
    return networks


def save_checkpoint(networks: Sequence, path: str):
    with open(path, "wb") as fh:
        fh.write(encode(networks))
    logger.debug("Wrote %d network(s) to %s", len(networks), path)


def load_checkpoint(path: str, expected: Optional[Sequence] = None) -> List[List[Layer]]:
    """Read every network; with ``expected`` the layer shapes must match and values are copied in.

    Args:
        path: checkpoint file
        expected: networks (objects with ``layers``) to fill, in file order

    Returns:
        The decoded layers of every network
    """
    with open(path, "rb") as fh:
        networks = decode(fh.read())
    if expected is not None:
        load_into(networks, expected)
    return networks


def load_into(networks: List[List[Layer]], targets: Sequence):
    if len(targets) > len(networks):
        raise CheckpointError(f"checkpoint holds {len(networks)} network(s), {len(targets)} requested")
    for n, (stored, target) in enumerate(zip(networks, targets)):
        layers = target.layers
        if len(stored) != len(layers):
            raise CheckpointError(f"network {n}: checkpoint has {len(stored)} layers, spec has {len(layers)}")
        for i, ((w, b), (tw, tb)) in enumerate(zip(stored, layers)):
            if w.shape != tw.shape:
                raise CheckpointError(
                    f"network {n} layer {i}: checkpoint weight {w.shape}, spec expects {tw.shape}"
                )
            tw[...] = w
            tb[...] = b
