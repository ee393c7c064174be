"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0-3    magic  b"VFCK"
    bytes 4-7    uint32 format version (currently 1)
    bytes 8-15   uint64 header length H
    bytes 16-..  H bytes of UTF-8 JSON (sorted keys) holding the network
                 geometry, mode tag, RNG seed, curriculum stage, flow
                 ratio, STFT geometry, spectrogram normalization tag,
                 and the parameter order with per-parameter shapes
    then         frozen Fourier frequencies, float64 LE
    then         parameter payloads, float64 LE, concatenated in the
                 header's parameter order, each flattened C-order

Identical training runs produce byte-identical files: the header is
serialized with sorted keys and contains nothing wall-clock dependent.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .network import NetworkConfig, VelocityNetwork

MAGIC = b"VFCK"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass
class CheckpointMeta:
    """Run metadata carried alongside the parameters."""

    seed: int = 0
    curriculum_stage: float | None = None
    flow_ratio: float | None = None
    sigma: float = 0.5
    stft: dict = field(default_factory=dict)
    normalization: str = "none"


def save_checkpoint(path: Path, net: VelocityNetwork, meta: CheckpointMeta) -> None:
    order = list(net.params.keys())
    header = {
        "config": net.config.to_dict(),
        "curriculum_stage": meta.curriculum_stage,
        "flow_ratio": meta.flow_ratio,
        "mode": net.config.mode,
        "normalization": meta.normalization,
        "param_order": order,
        "param_shapes": {name: list(net.params[name].shape) for name in order},
        "seed": meta.seed,
        "sigma": meta.sigma,
        "stft": meta.stft,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(hjson)), hjson]
    chunks.append(net.freqs.astype("<f8").tobytes())
    for name in order:
        chunks.append(np.ascontiguousarray(net.params[name].data).astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Path) -> tuple[VelocityNetwork, CheckpointMeta]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16 : 16 + hlen].decode())
    config = NetworkConfig.from_dict(header["config"])
    if header["mode"] != config.mode:
        raise CheckpointError(f"{path}: mode tag disagrees with geometry")

    offset = 16 + hlen
    k2 = config.embed.dim // 2
    freqs = np.frombuffer(blob, dtype="<f8", count=k2, offset=offset).reshape(1, k2).copy()
    offset += 8 * k2
    params: dict[str, Tensor] = {}
    for name in header["param_order"]:
        shape = tuple(header["param_shapes"][name])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        params[name] = Tensor(arr)
        offset += 8 * count
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")

    net = VelocityNetwork(config, freqs, params)
    meta = CheckpointMeta(
        seed=header["seed"],
        curriculum_stage=header["curriculum_stage"],
        flow_ratio=header["flow_ratio"],
        sigma=header["sigma"],
        stft=header["stft"],
        normalization=header["normalization"],
    )
    return net, meta
