"""Compact conditional velocity-field network.

The network maps a stack of spectrogram frames to a same-shape field
prediction.  Frames are packed as (frames, 2*bins) real features; the
noisy conditioning frames are concatenated along the feature axis.  Two
scalar times enter through a frozen Gaussian Fourier feature map followed
by a shared linear layer; in mean-flow mode the two K-dim embeddings are
concatenated and fused back to K dims by one more linear layer, and in
flow mode the start-time embedding path does not exist at all.  The fused
(or plain) time vector is injected additively into every hidden block.

Time conditioning is FiLM-style: each block's pre-activation is scaled by
(1 + W_s e) and shifted by W_b e.  The multiplicative path matters: the
optimal velocity field applies a roughly 1/t input gain, which a purely
additive injection cannot express with a stack this shallow.

``init_from_flow`` turns a trained flow-mode network into a mean-flow one
whose fusion layer is the block matrix [0 | I] with zero bias, making the
fused embedding equal the plain end-time embedding bit-for-bit, so the new
network reproduces its source exactly for every start time.

All arithmetic runs on the autodiff Tensor type, so forward passes can
carry reverse tapes or forward tangents as needed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MODES = ("flow", "meanflow")


class NetworkError(ValueError):
    """Geometry or mode contract violation."""


@dataclass(frozen=True)
class TimeEmbeddingConfig:
    dim: int = 128
    fourier_scale: float = 16.0

    def __post_init__(self):
        if self.dim % 2 != 0 or self.dim <= 0:
            raise NetworkError("embedding dim must be even and positive")
        if self.fourier_scale <= 0:
            raise NetworkError("fourier_scale must be positive")


@dataclass(frozen=True)
class NetworkConfig:
    n_bins: int
    hidden: int = 128
    n_blocks: int = 2
    embed: TimeEmbeddingConfig = TimeEmbeddingConfig()
    mode: str = "flow"

    def __post_init__(self):
        if self.mode not in MODES:
            raise NetworkError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_bins <= 0 or self.hidden <= 0 or self.n_blocks <= 0:
            raise NetworkError("n_bins, hidden and n_blocks must be positive")

    @property
    def feat_dim(self) -> int:
        return 2 * self.n_bins

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "hidden": self.hidden,
            "n_blocks": self.n_blocks,
            "embed_dim": self.embed.dim,
            "fourier_scale": self.embed.fourier_scale,
            "mode": self.mode,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        return NetworkConfig(
            n_bins=d["n_bins"],
            hidden=d["hidden"],
            n_blocks=d["n_blocks"],
            embed=TimeEmbeddingConfig(dim=d["embed_dim"], fourier_scale=d["fourier_scale"]),
            mode=d["mode"],
        )


class VelocityNetwork:
    """Parameter container plus forward pass.  ``n_evals`` counts forward calls."""

    def __init__(self, config: NetworkConfig, freqs: np.ndarray, params: dict[str, Tensor]):
        if freqs.shape != (1, config.embed.dim // 2):
            raise NetworkError("frozen frequency bank has the wrong shape")
        self.config = config
        self.freqs = freqs
        self.params = params
        self.n_evals = 0
        self._two_pi_freqs = 2.0 * np.pi * freqs

    # -- construction -------------------------------------------------------

    @staticmethod
    def init(config: NetworkConfig, seed: int) -> "VelocityNetwork":
        rng = np.random.Generator(np.random.PCG64(seed))
        k = config.embed.dim
        freqs = rng.normal(0.0, config.embed.fourier_scale, (1, k // 2))
        params: dict[str, Tensor] = {}

        def dense(name: str, n_in: int, n_out: int, zero: bool = False) -> None:
            if zero:
                w = np.zeros((n_in, n_out))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out))
            params[name + "_w"] = Tensor(w)
            params[name + "_b"] = Tensor(np.zeros(n_out))

        dense("temb", k, k)
        if config.mode == "meanflow":
            dense("fuse", 2 * k, k)
        d, h = 2 * config.feat_dim, config.hidden
        dense("in", d, h)
        params["in_ts"] = Tensor(np.zeros((k, h)))
        params["in_tw"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(k), (k, h)))
        for i in range(config.n_blocks):
            dense(f"blk{i}", h, h)
            params[f"blk{i}_ts"] = Tensor(np.zeros((k, h)))
            params[f"blk{i}_tw"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(k), (k, h)))
        dense("out", h, config.feat_dim, zero=True)
        return VelocityNetwork(config, freqs, params)

    def clone_params(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise NetworkError("parameter name set mismatch")
        for name, arr in arrays.items():
            if arr.shape != self.params[name].shape:
                raise NetworkError(f"shape mismatch for parameter {name}")
            self.params[name] = Tensor(arr.copy())

    @property
    def param_count(self) -> int:
        return int(np.sum([p.data.size for p in self.params.values()]))

    # -- time paths ----------------------------------------------------------

    def fourier_features(self, s) -> Tensor:
        """Pre-linear features [sin(2 pi f s), cos(2 pi f s)], shape (1, K)."""
        s = s if isinstance(s, Tensor) else Tensor(s)
        angles = ad.mul(s, Tensor(self._two_pi_freqs))
        return ad.concat([ad.sin(angles), ad.cos(angles)], axis=1)

    def embed_time(self, s) -> Tensor:
        """Gaussian Fourier features through the shared linear layer."""
        value = float(s.data) if isinstance(s, Tensor) else float(s)
        if not 0.0 <= value <= 1.0:
            raise NetworkError(f"time {value} outside [0, 1]")
        return ad.affine(self.fourier_features(s), self.params["temb_w"], self.params["temb_b"])

    def fuse_times(self, r, t) -> Tensor:
        """Fused K-dim vector from (start, end) embeddings; mean-flow mode only."""
        if self.config.mode != "meanflow":
            raise NetworkError("fusion layer exists only in mean-flow mode")
        rv = float(r.data) if isinstance(r, Tensor) else float(r)
        tv = float(t.data) if isinstance(t, Tensor) else float(t)
        if rv > tv:
            raise NetworkError(f"start time {rv} exceeds end time {tv}")
        cat = ad.concat([self.embed_time(r), self.embed_time(t)], axis=1)
        return ad.affine(cat, self.params["fuse_w"], self.params["fuse_b"])

    # -- forward -------------------------------------------------------------

    def forward(self, x, r, t, y) -> Tensor:
        """Predicted field over packed frames; output shape matches ``x``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        y = y if isinstance(y, Tensor) else Tensor(y)
        d = self.config.feat_dim
        if x.ndim != 2 or x.shape[1] != d:
            raise NetworkError(f"input shape {x.shape} does not match feature width {d}")
        if y.shape != x.shape:
            raise NetworkError(f"conditioning shape {y.shape} differs from input {x.shape}")
        self.n_evals += 1

        if self.config.mode == "meanflow":
            e = self.fuse_times(r, t)
        else:
            e = self.embed_time(t)

        h = self._film(ad.concat([x, y], axis=1), "in", e)
        for i in range(self.config.n_blocks):
            h = self._film(h, f"blk{i}", e)
        return ad.affine(h, self.params["out_w"], self.params["out_b"])

    def _film(self, h, name: str, e) -> Tensor:
        """silu(affine(h) * (1 + e@W_s) + e@W_b); scale weights start at zero."""
        scale = ad.add(1.0, ad.matmul(e, self.params[name + "_ts"]))
        shift = ad.matmul(e, self.params[name + "_tw"])
        pre = ad.affine(h, self.params[name + "_w"], self.params[name + "_b"])
        return ad.silu(ad.add(ad.mul(pre, scale), shift))


def init_from_flow(flow_net: VelocityNetwork) -> VelocityNetwork:
    """Mean-flow network that reproduces a trained flow network exactly.

    Copies the backbone, time-embedding parameters and frozen frequencies,
    and sets the fusion layer to [0 | I] with zero bias under the
    (start, end) concatenation order, so the fused embedding equals the
    end-time embedding and the output is independent of the start time.
    """
    if flow_net.config.mode != "flow":
        raise NetworkError(f"source network mode is {flow_net.config.mode!r}, expected 'flow'")
    k = flow_net.config.embed.dim
    config = replace(flow_net.config, mode="meanflow")
    params: dict[str, Tensor] = {}
    for name, p in flow_net.params.items():
        params[name] = Tensor(p.data.copy())
        if name == "temb_b":
            # fusion layer sits right after the time embeddings in the
            # serialized order
            params["fuse_w"] = Tensor(np.vstack([np.zeros((k, k)), np.eye(k)]))
            params["fuse_b"] = Tensor(np.zeros(k))
    return VelocityNetwork(config, flow_net.freqs.copy(), params)
