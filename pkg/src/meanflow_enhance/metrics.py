"""Intrusive quality metrics and the model/NFE comparison report.

Two waveform metrics against the clean reference:

* SI-SDR: project the estimate onto the reference, report the
  target-to-residual energy ratio in dB.  Scale-invariant by
  construction; a zero residual is capped at +100 dB.
* log-spectral distance: RMS over spectrogram cells of the dB magnitude
  difference, with magnitudes floored at 1e-8.

``compare_models`` evaluates every (model, nfe, split) cell with fixed
per-utterance seeds and emits rows in a stable column order, both as
tab-separated text and as an aligned human-readable table.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointMeta
from .frontend import SpectroPair, StftConfig, istft, stft
from .network import VelocityNetwork
from .sampler import SamplerConfig, enhance

SI_SDR_CAP_DB = 100.0
REPORT_COLUMNS = ("model", "nfe", "split", "si_sdr_db", "lsd_db", "n_utts")


class MetricsError(ValueError):
    """Silent reference or geometry mismatch."""


def si_sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB."""
    if reference.shape != estimate.shape:
        raise MetricsError("reference and estimate lengths differ")
    ref_energy = float(np.dot(reference, reference))
    if ref_energy <= 0.0:
        raise MetricsError("reference is silent")
    alpha = float(np.dot(estimate, reference)) / ref_energy
    target = alpha * reference
    residual = estimate - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if den == 0.0 or 10.0 * np.log10(num / den) > SI_SDR_CAP_DB:
        return SI_SDR_CAP_DB
    if num == 0.0:
        return -SI_SDR_CAP_DB
    return 10.0 * np.log10(num / den)


def log_spectral_distance(
    reference: np.ndarray, estimate: np.ndarray, stft_cfg: StftConfig
) -> float:
    """RMS dB magnitude-spectrogram distance, magnitudes floored at 1e-8."""
    if reference.shape != estimate.shape:
        raise MetricsError("reference and estimate lengths differ")
    ref_mag = np.maximum(np.abs(stft(reference, stft_cfg)), 1e-8)
    est_mag = np.maximum(np.abs(stft(estimate, stft_cfg)), 1e-8)
    d = 20.0 * (np.log10(ref_mag) - np.log10(est_mag))
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class EvalModel:
    """A labelled checkpoint to score; ``net=None`` scores the noisy input itself."""

    label: str
    net: VelocityNetwork | None = None
    meta: CheckpointMeta | None = None


@dataclass
class ReportRow:
    model: str
    nfe: int
    split: str
    si_sdr_db: float
    lsd_db: float
    n_utts: int

    def as_strings(self) -> tuple[str, ...]:
        return (
            self.model,
            str(self.nfe),
            self.split,
            f"{self.si_sdr_db:.4f}",
            f"{self.lsd_db:.4f}",
            str(self.n_utts),
        )


def compare_models(
    models: list[EvalModel],
    corpus: list[SpectroPair],
    nfe_list: list[int],
    seed: int = 0,
) -> list[ReportRow]:
    """Per-(model, nfe, split) corpus means with fixed per-utterance seeds."""
    splits = sorted({p.split for p in corpus})
    for model in models:
        if model.net is not None and model.meta is not None and corpus:
            if model.meta.stft and model.meta.stft != corpus[0].stft.to_dict():
                raise MetricsError(
                    f"checkpoint {model.label!r} STFT geometry disagrees with the corpus"
                )
    rows = []
    for model in models:
        for nfe in nfe_list:
            for split in splits:
                pairs = sorted(
                    (p for p in corpus if p.split == split), key=lambda p: p.pair_id
                )
                sdrs, lsds = [], []
                for idx, pair in enumerate(pairs):
                    if model.net is None:
                        est = pair.noisy_wave
                    else:
                        sigma = model.meta.sigma if model.meta is not None else 0.5
                        cfg = SamplerConfig(nfe=nfe, seed=seed, sigma=sigma)
                        spec = enhance(model.net, pair.noisy_spec, cfg, utt_index=idx)
                        est = istft(spec, pair.stft, pair.n_samples)
                    sdrs.append(si_sdr(pair.clean_wave, est))
                    lsds.append(log_spectral_distance(pair.clean_wave, est, pair.stft))
                rows.append(
                    ReportRow(
                        model=model.label,
                        nfe=nfe,
                        split=split,
                        si_sdr_db=float(np.mean(sdrs)),
                        lsd_db=float(np.mean(lsds)),
                        n_utts=len(pairs),
                    )
                )
    return rows


def report_lines(rows: list[ReportRow]) -> list[str]:
    """Tab-separated lines in the stable column order."""
    lines = ["\t".join(REPORT_COLUMNS)]
    lines += ["\t".join(r.as_strings()) for r in rows]
    return lines


def report_table(rows: list[ReportRow]) -> str:
    """Aligned human-readable table."""
    cells = [REPORT_COLUMNS] + [r.as_strings() for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    out = []
    for row in cells:
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(out)


def write_report(rows: list[ReportRow], out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv = out_dir / "report.tsv"
    txt = out_dir / "report.txt"
    tsv.write_text("\n".join(report_lines(rows)) + "\n")
    txt.write_text(report_table(rows) + "\n")
    return tsv, txt
