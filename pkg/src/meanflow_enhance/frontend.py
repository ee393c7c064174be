"""Synthetic corpus generation and STFT conversion.

Clean material is a randomized harmonic stack (stand-in for recorded
speech); noisy material mixes in one of two noise families at an exact
signal-to-noise ratio:

* ``pink``   - broadband 1/f noise (training and in-domain test splits)
* ``bursts`` - band-passed, amplitude-modulated bursts (the out-of-domain
  test split, a deliberately different noise family)

Waveforms are converted to complex spectrograms with a hand-rolled STFT:
periodic Hann analysis window, zero-padded framing that covers the whole
signal, and a least-squares overlap-add inverse normalised by the summed
squared window.  The inverse is exact to rounding at every sample,
including the edges, for any geometry that satisfies the nonzero
overlap-add condition (checked when the config is built).

Spectrograms use a fixed documented scale: analysis multiplies the raw
FFT by 2/sqrt(n_fft), synthesis undoes it.  This puts desk-scale
spectrogram values on the same order as the generative prior's standard
deviation.  Energy bookkeeping under this convention: the two-sided
spectrogram energy equals ``4 * sum_t x(t)^2 * wsq(t)`` where ``wsq(t)``
is the summed squared analysis window covering sample t.  Beyond that
fixed scale no magnitude compression is applied; the choice is recorded
in checkpoints.

Corpus persistence is one small binary container per pair (versioned
header, shapes, little-endian float64 payload) holding the clean and noisy
waveforms, plus a tab-separated manifest with per-pair checksums.
Spectrograms are recomputed on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAIR_MAGIC = b"SPRB"
PAIR_VERSION = 1
MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("pair_id", "split", "snr_db", "noise_family", "checksum")

TRAIN_SNRS_DB = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS_DB = (2.5, 7.5, 12.5, 17.5)


class FrontendError(ValueError):
    """Bad geometry, silent inputs, or malformed corpus files."""


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 126
    hop: int = 32
    window: str = "hann"
    sample_rate_hz: int = 8000

    def __post_init__(self):
        if self.n_fft <= 0 or self.hop <= 0:
            raise FrontendError("n_fft and hop must be positive")
        if self.hop > self.n_fft:
            raise FrontendError(f"hop {self.hop} exceeds n_fft {self.n_fft}")
        if self.window != "hann":
            raise FrontendError(f"unknown window {self.window!r}")
        if self.sample_rate_hz <= 0:
            raise FrontendError("sample_rate_hz must be positive")
        wsq = _window(self) ** 2
        cover = np.zeros(self.hop)
        for j in range(self.hop):
            cover[j] = wsq[j :: self.hop].sum()
        if cover.min() <= 1e-12:
            raise FrontendError(
                f"window/hop ({self.n_fft}/{self.hop}) violates nonzero overlap-add"
            )

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def to_dict(self) -> dict:
        return {
            "n_fft": self.n_fft,
            "hop": self.hop,
            "window": self.window,
            "sample_rate_hz": self.sample_rate_hz,
        }


def _window(cfg: StftConfig) -> np.ndarray:
    n = np.arange(cfg.n_fft)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / cfg.n_fft))


def _frame_count(n_samples: int, cfg: StftConfig) -> int:
    # left pad of n_fft zeros; frames advance by hop until the last real
    # sample has every window offset covering it
    return (cfg.n_fft + n_samples - 1) // cfg.hop + 1


def stft(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Complex spectrogram, shape (n_bins, n_frames)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise FrontendError("stft expects a 1-D waveform")
    if len(x) < cfg.n_fft:
        raise FrontendError(f"waveform length {len(x)} shorter than n_fft {cfg.n_fft}")
    n_frames = _frame_count(len(x), cfg)
    padded = np.zeros((n_frames - 1) * cfg.hop + cfg.n_fft)
    padded[cfg.n_fft : cfg.n_fft + len(x)] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft)[:: cfg.hop]
    return (2.0 / np.sqrt(cfg.n_fft)) * np.fft.rfft(frames * _window(cfg), axis=1).T


def istft(spec: np.ndarray, cfg: StftConfig, n_samples: int) -> np.ndarray:
    """Least-squares overlap-add inverse; ``n_samples`` trims to the original length."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != cfg.n_bins:
        raise FrontendError(f"spectrogram shape {spec.shape} does not match {cfg.n_bins} bins")
    n_frames = spec.shape[1]
    w = _window(cfg)
    frames = np.fft.irfft((np.sqrt(cfg.n_fft) / 2.0) * spec.T, n=cfg.n_fft, axis=1) * w
    total = (n_frames - 1) * cfg.hop + cfg.n_fft
    buf = np.zeros(total)
    wsq = np.zeros(total)
    for i in range(n_frames):
        lo = i * cfg.hop
        buf[lo : lo + cfg.n_fft] += frames[i]
        wsq[lo : lo + cfg.n_fft] += w * w
    out = np.where(wsq > 1e-12, buf / np.where(wsq > 1e-12, wsq, 1.0), 0.0)
    if cfg.n_fft + n_samples > total:
        raise FrontendError(f"n_samples {n_samples} exceeds spectrogram coverage")
    return out[cfg.n_fft : cfg.n_fft + n_samples]


def pack_spec(spec: np.ndarray) -> np.ndarray:
    """Complex (bins, frames) -> real (frames, 2*bins): real block then imag block."""
    return np.concatenate([spec.real.T, spec.imag.T], axis=1)


def unpack_spec(feat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_spec`."""
    n_bins = feat.shape[1] // 2
    return (feat[:, :n_bins] + 1j * feat[:, n_bins:]).T


# ---------------------------------------------------------------------------
# Synthesis and mixing
# ---------------------------------------------------------------------------


def synth_clean(rng: np.random.Generator, duration_s: float, cfg: StftConfig) -> np.ndarray:
    """Harmonic stack: random f0 in [90, 300] Hz, 3-8 decaying partials,
    slow amplitude envelope, peak-normalised to 0.5."""
    if duration_s <= 0:
        raise FrontendError("duration must be positive")
    n = int(round(duration_s * cfg.sample_rate_hz))
    t = np.arange(n) / cfg.sample_rate_hz
    f0 = rng.uniform(90.0, 300.0)
    n_partials = int(rng.integers(3, 9))
    x = np.zeros(n)
    for k in range(1, n_partials + 1):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += (1.0 / k) * np.sin(2.0 * np.pi * k * f0 * t + phase)
    env_hz = rng.uniform(0.3, 1.5)
    env_phase = rng.uniform(0.0, 2.0 * np.pi)
    x *= 0.7 + 0.3 * np.sin(2.0 * np.pi * env_hz * t + env_phase)
    return 0.5 * x / np.max(np.abs(x))


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Broadband 1/f noise, unit RMS."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    k = np.arange(len(spec), dtype=np.float64)
    k[0] = 1.0
    spec /= np.sqrt(k)
    x = np.fft.irfft(spec, n=n)
    return x / np.sqrt(np.mean(x * x))


def burst_noise(rng: np.random.Generator, n: int, sample_rate_hz: int) -> np.ndarray:
    """Band-passed (600-1800 Hz) bursts gated by a raised-cosine envelope, unit RMS."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    spec[(freqs < 600.0) | (freqs > 1800.0)] = 0.0
    band = np.fft.irfft(spec, n=n)
    gate_hz = rng.uniform(2.0, 6.0)
    gate_phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n) / sample_rate_hz
    gate = 0.5 * (1.0 - np.cos(2.0 * np.pi * gate_hz * t + gate_phase))
    x = band * (0.1 + 0.9 * gate * gate)
    return x / np.sqrt(np.mean(x * x))


NOISE_FAMILIES = {
    "pink": lambda rng, n, sr: pink_noise(rng, n),
    "bursts": lambda rng, n, sr: burst_noise(rng, n, sr),
}


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """clean + g*noise with g chosen so the clean-to-scaled-noise SNR is exact."""
    if clean.shape != noise.shape:
        raise FrontendError("clean and noise lengths differ")
    p_clean = float(np.mean(clean * clean))
    p_noise = float(np.mean(noise * noise))
    if p_clean <= 0.0:
        raise FrontendError("clean signal is silent")
    if p_noise <= 0.0:
        raise FrontendError("noise signal is silent; mixing gain undefined")
    g = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + g * noise


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass
class SpectroPair:
    """One training/eval pair: waveforms plus derived complex spectrograms."""

    pair_id: str
    split: str
    snr_db: float
    noise_family: str
    clean_wave: np.ndarray
    noisy_wave: np.ndarray
    clean_spec: np.ndarray
    noisy_spec: np.ndarray
    stft: StftConfig

    @property
    def n_samples(self) -> int:
        return len(self.clean_wave)


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 40
    n_val: int = 4
    n_test: int = 16
    n_ood: int = 12
    duration_s: float = 0.4
    train_snrs_db: tuple = TRAIN_SNRS_DB
    test_snrs_db: tuple = TEST_SNRS_DB

    def __post_init__(self):
        for name in ("n_train", "n_val", "n_test", "n_ood"):
            if getattr(self, name) <= 0:
                raise FrontendError(f"{name} must be positive")


# split -> (noise family, which SNR set); families of train and ood are
# disjoint by construction
SPLIT_RECIPE = {
    "train": ("pink", "train"),
    "val": ("pink", "train"),
    "test": ("pink", "test"),
    "ood": ("bursts", "test"),
}


def _make_pair(
    split: str, index: int, seed: int, corpus_cfg: CorpusConfig, stft_cfg: StftConfig
) -> SpectroPair:
    family, snr_set = SPLIT_RECIPE[split]
    snrs = corpus_cfg.train_snrs_db if snr_set == "train" else corpus_cfg.test_snrs_db
    snr_db = float(snrs[index % len(snrs)])
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _split_key(split), index]))
    )
    clean = synth_clean(rng, corpus_cfg.duration_s, stft_cfg)
    noise = NOISE_FAMILIES[family](rng, len(clean), stft_cfg.sample_rate_hz)
    noisy = mix_at_snr(clean, noise, snr_db)
    realized = 10.0 * np.log10(np.mean(clean**2) / np.mean((noisy - clean) ** 2))
    if abs(realized - snr_db) > 1e-6:
        raise FrontendError(f"realized SNR {realized} deviates from requested {snr_db}")
    return SpectroPair(
        pair_id=f"{split}-{index:04d}",
        split=split,
        snr_db=snr_db,
        noise_family=family,
        clean_wave=clean,
        noisy_wave=noisy,
        clean_spec=stft(clean, stft_cfg),
        noisy_spec=stft(noisy, stft_cfg),
        stft=stft_cfg,
    )


def _split_key(split: str) -> int:
    return {"train": 0, "val": 1, "test": 2, "ood": 3}[split]


def build_corpus(seed: int, corpus_cfg: CorpusConfig, stft_cfg: StftConfig) -> list[SpectroPair]:
    """Generate all four splits deterministically from ``seed``."""
    counts = {
        "train": corpus_cfg.n_train,
        "val": corpus_cfg.n_val,
        "test": corpus_cfg.n_test,
        "ood": corpus_cfg.n_ood,
    }
    pairs = []
    for split, count in counts.items():
        for i in range(count):
            pairs.append(_make_pair(split, i, seed, corpus_cfg, stft_cfg))
    return pairs


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _pair_bytes(pair: SpectroPair) -> bytes:
    header = {
        "pair_id": pair.pair_id,
        "split": pair.split,
        "snr_db": pair.snr_db,
        "noise_family": pair.noise_family,
        "n_samples": pair.n_samples,
        "stft": pair.stft.to_dict(),
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return b"".join(
        [
            PAIR_MAGIC,
            struct.pack("<I", PAIR_VERSION),
            struct.pack("<Q", len(hjson)),
            hjson,
            pair.clean_wave.astype("<f8").tobytes(),
            pair.noisy_wave.astype("<f8").tobytes(),
        ]
    )


def save_pair(pair: SpectroPair, path: Path) -> str:
    """Write one pair container; returns its sha256 checksum."""
    blob = _pair_bytes(pair)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_pair(path: Path) -> SpectroPair:
    blob = Path(path).read_bytes()
    if blob[:4] != PAIR_MAGIC:
        raise FrontendError(f"{path}: not a pair container")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != PAIR_VERSION:
        raise FrontendError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16 : 16 + hlen].decode())
    n = header["n_samples"]
    offset = 16 + hlen
    clean = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).copy()
    noisy = np.frombuffer(blob, dtype="<f8", count=n, offset=offset + 8 * n).copy()
    cfg = StftConfig(**header["stft"])
    return SpectroPair(
        pair_id=header["pair_id"],
        split=header["split"],
        snr_db=header["snr_db"],
        noise_family=header["noise_family"],
        clean_wave=clean,
        noisy_wave=noisy,
        clean_spec=stft(clean, cfg),
        noisy_spec=stft(noisy, cfg),
        stft=cfg,
    )


def save_corpus(pairs: list[SpectroPair], out_dir: Path) -> Path:
    """Write pair containers plus the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for pair in pairs:
        checksum = save_pair(pair, out_dir / f"{pair.pair_id}.spb")
        rows.append((pair.pair_id, pair.split, f"{pair.snr_db:g}", pair.noise_family, checksum))
    manifest = out_dir / MANIFEST_NAME
    lines = ["\t".join(MANIFEST_COLUMNS)]
    lines += ["\t".join(row) for row in rows]
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_manifest(corpus_dir: Path) -> list[dict]:
    manifest = Path(corpus_dir) / MANIFEST_NAME
    if not manifest.exists():
        raise FrontendError(f"no manifest at {manifest}")
    lines = manifest.read_text().strip().split("\n")
    if tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise FrontendError("manifest header mismatch")
    return [dict(zip(MANIFEST_COLUMNS, line.split("\t"))) for line in lines[1:]]


def load_corpus(corpus_dir: Path, split: str | None = None) -> list[SpectroPair]:
    corpus_dir = Path(corpus_dir)
    pairs = []
    for row in load_manifest(corpus_dir):
        if split is not None and row["split"] != split:
            continue
        pairs.append(load_pair(corpus_dir / f"{row['pair_id']}.spb"))
    return pairs
