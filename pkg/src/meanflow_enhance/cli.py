"""Command-line pipeline: corpus generation, training, enhancement, evaluation.

Subcommands::

    mfe gen-corpus        --config cfg.json --out DIR
    mfe train-flow        --config cfg.json --corpus DIR --out DIR
    mfe train-meanflow    --config cfg.json --corpus DIR --init-flow CKPT --out DIR
    mfe enhance           --checkpoint CKPT --corpus DIR --split test --nfe 1 --out DIR
    mfe eval              --config cfg.json --corpus DIR --out DIR \
                          --checkpoints label=CKPT [label=CKPT ...]
    mfe ablate-flow-ratio --config cfg.json --corpus DIR --init-flow CKPT --out DIR

Everything numeric lives in the JSON config; flags carry only paths and
selection.  Unknown config keys are rejected.  Every command writes the
fully-resolved config and the code version next to its outputs, and never
mutates its inputs.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 an
acceptance threshold configured for ``eval`` failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, CheckpointMeta, load_checkpoint, save_checkpoint
from .frontend import (
    CorpusConfig,
    FrontendError,
    StftConfig,
    build_corpus,
    istft,
    load_corpus,
    save_corpus,
)
from .metrics import EvalModel, ReportRow, compare_models, report_lines, report_table, write_report
from .network import NetworkConfig, NetworkError, TimeEmbeddingConfig, init_from_flow
from .sampler import SamplerConfig, enhance
from .training import (
    CurriculumSchedule,
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_THRESHOLD = 4


class ConfigError(ValueError):
    """Unknown keys or invalid values in the run config."""


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

CONFIG_SECTIONS = {
    "seed": int,
    "stft": {"n_fft": int, "hop": int, "window": str, "sample_rate_hz": int},
    "path": {"sigma": float, "t_floor": float},
    "network": {"hidden": int, "n_blocks": int, "embed_dim": int, "fourier_scale": float},
    "train": {
        "flow_ratio": float,
        "lr_scratch": float,
        "lr_finetune": float,
        "weight_decay": float,
        "batch_size": int,
        "flow_steps": int,
        "val_every": int,
    },
    "curriculum": {"stages": list, "steps_per_stage": int},
    "corpus": {
        "n_train": int,
        "n_val": int,
        "n_test": int,
        "n_ood": int,
        "duration_s": float,
        "train_snrs_db": list,
        "test_snrs_db": list,
    },
    "sampler": {"nfe_list": list},
    "ablation": {"ratios": list},
    "thresholds": {
        "min_si_sdr_gap_nfe1_db": float,
        "max_meanflow_nfe1_vs_nfe5_db": float,
    },
}

DEFAULT_CONFIG = {
    "seed": 0,
    "stft": {"n_fft": 126, "hop": 32, "window": "hann", "sample_rate_hz": 8000},
    "path": {"sigma": 0.5, "t_floor": 1e-5},
    "network": {"hidden": 128, "n_blocks": 2, "embed_dim": 128, "fourier_scale": 16.0},
    "train": {
        "flow_ratio": 0.75,
        "lr_scratch": 1e-4,
        "lr_finetune": 1e-5,
        "weight_decay": 1e-6,
        "batch_size": 2,
        "flow_steps": 2200,
        "val_every": 100,
    },
    "curriculum": {"stages": [0.2, 0.4, 0.6, 0.8, 1.0], "steps_per_stage": 350},
    "corpus": {
        "n_train": 40,
        "n_val": 4,
        "n_test": 16,
        "n_ood": 12,
        "duration_s": 0.4,
        "train_snrs_db": [0.0, 5.0, 10.0, 15.0],
        "test_snrs_db": [2.5, 7.5, 12.5, 17.5],
    },
    "sampler": {"nfe_list": [1, 2, 5]},
    "ablation": {"ratios": [0.0, 0.25, 0.5, 0.75]},
    "thresholds": {},
}


def load_config(path: str | None) -> dict:
    """Defaults overlaid with the given JSON file; unknown keys rejected."""
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return config
    try:
        user = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    for key, value in user.items():
        if key not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        spec = CONFIG_SECTIONS[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            for sub, sub_value in value.items():
                if sub not in spec:
                    raise ConfigError(f"unknown config key {key}.{sub!r}")
                config[key][sub] = sub_value
        else:
            config[key] = value
    return config


def _stft_config(config: dict) -> StftConfig:
    return StftConfig(**config["stft"])


def _corpus_config(config: dict) -> CorpusConfig:
    c = config["corpus"]
    return CorpusConfig(
        n_train=c["n_train"],
        n_val=c["n_val"],
        n_test=c["n_test"],
        n_ood=c["n_ood"],
        duration_s=c["duration_s"],
        train_snrs_db=tuple(c["train_snrs_db"]),
        test_snrs_db=tuple(c["test_snrs_db"]),
    )


def _network_config(config: dict, n_bins: int, mode: str) -> NetworkConfig:
    n = config["network"]
    return NetworkConfig(
        n_bins=n_bins,
        hidden=n["hidden"],
        n_blocks=n["n_blocks"],
        embed=TimeEmbeddingConfig(dim=n["embed_dim"], fourier_scale=n["fourier_scale"]),
        mode=mode,
    )


def _train_config(config: dict) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        flow_ratio=t["flow_ratio"],
        lr_scratch=t["lr_scratch"],
        lr_finetune=t["lr_finetune"],
        weight_decay=t["weight_decay"],
        batch_size=t["batch_size"],
        sigma=config["path"]["sigma"],
        seed=config["seed"],
        t_floor=config["path"]["t_floor"],
        steps=t["flow_steps"],
        val_every=t["val_every"],
    )


def _curriculum(config: dict) -> CurriculumSchedule:
    c = config["curriculum"]
    return CurriculumSchedule(stages=tuple(c["stages"]), steps_per_stage=c["steps_per_stage"])


def _write_run_info(out_dir: Path, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(config, sort_keys=True, indent=2) + "\n"
    )
    (out_dir / "VERSION").write_text(__version__ + "\n")


def _packed_items(pairs) -> list:
    from .frontend import pack_spec

    return [(pack_spec(p.clean_spec), pack_spec(p.noisy_spec)) for p in pairs]


def _checkpoint_meta(config: dict, stage=None, ratio=None) -> CheckpointMeta:
    return CheckpointMeta(
        seed=config["seed"],
        curriculum_stage=stage,
        flow_ratio=ratio,
        sigma=config["path"]["sigma"],
        stft=config["stft"],
        normalization="none",
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    pairs = build_corpus(config["seed"], _corpus_config(config), _stft_config(config))
    manifest = save_corpus(pairs, out_dir)
    _write_run_info(out_dir, config)
    counts: dict[str, int] = {}
    for p in pairs:
        counts[p.split] = counts.get(p.split, 0) + 1
    for split in ("train", "val", "test", "ood"):
        print(f"{split}: {counts.get(split, 0)} pairs")
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_train_flow(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    train_pairs = load_corpus(args.corpus, "train")
    val_pairs = load_corpus(args.corpus, "val")
    if not train_pairs:
        raise ConfigError(f"no training pairs found in {args.corpus}")
    stft_cfg = _stft_config(config)
    result = train(
        "flow",
        _packed_items(train_pairs),
        _packed_items(val_pairs),
        _train_config(config),
        net_config=_network_config(config, stft_cfg.n_bins, "flow"),
    )
    _write_run_info(out_dir, config)
    result.net.load_param_arrays(result.stages[-1].best_params)
    ckpt = out_dir / "flow.ckpt"
    save_checkpoint(ckpt, result.net, _checkpoint_meta(config))
    (out_dir / "metrics.tsv").write_text("\n".join(result.metrics_lines()) + "\n")
    print(f"checkpoint: {ckpt}")
    print(f"final val loss: {result.stages[-1].best_val:.6e}")
    return EXIT_OK


def _run_meanflow(config, corpus_dir, init_ckpt, out_dir, ratio):
    """Curriculum fine-tuning from a flow checkpoint; returns (result, stage files)."""
    train_pairs = load_corpus(corpus_dir, "train")
    val_pairs = load_corpus(corpus_dir, "val")
    flow_net, flow_meta = load_checkpoint(init_ckpt)
    expected = _network_config(config, _stft_config(config).n_bins, "flow")
    if flow_net.config != expected:
        raise ConfigError("flow checkpoint geometry disagrees with the config")
    cfg = dataclasses.replace(_train_config(config), flow_ratio=ratio)
    schedule = _curriculum(config)
    result = train(
        "meanflow",
        _packed_items(train_pairs),
        _packed_items(val_pairs),
        cfg,
        schedule=schedule,
        init_net=init_from_flow(flow_net),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    stage_files = []
    for stage in result.stages:
        net = result.net
        net.load_param_arrays(stage.best_params)
        path = out_dir / f"stage_{stage.width:g}.ckpt"
        save_checkpoint(path, net, _checkpoint_meta(config, stage=stage.width, ratio=ratio))
        stage_files.append(path)
    result.net.load_param_arrays(result.stages[-1].best_params)
    final = out_dir / "meanflow.ckpt"
    save_checkpoint(final, result.net, _checkpoint_meta(config, stage=1.0, ratio=ratio))
    (out_dir / "metrics.tsv").write_text("\n".join(result.metrics_lines()) + "\n")
    stage_info = [
        {
            "width": s.width,
            "max_sampled_width": s.max_sampled_width,
            "best_val": s.best_val,
            "steps": s.steps,
        }
        for s in result.stages
    ]
    (out_dir / "curriculum.json").write_text(json.dumps(stage_info, indent=2) + "\n")
    return result, final


def cmd_train_meanflow(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    _write_run_info(out_dir, config)
    result, final = _run_meanflow(
        config, args.corpus, args.init_flow, out_dir, config["train"]["flow_ratio"]
    )
    print(f"checkpoint: {final}")
    for stage in result.stages:
        print(
            f"stage {stage.width:g}: best val {stage.best_val:.6e}, "
            f"max sampled width {stage.max_sampled_width:.4f}"
        )
    return EXIT_OK


def cmd_enhance(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    net, meta = load_checkpoint(args.checkpoint)
    pairs = load_corpus(args.corpus, args.split)
    if not pairs:
        raise ConfigError(f"no pairs in split {args.split!r}")
    if meta.stft and meta.stft != pairs[0].stft.to_dict():
        raise ConfigError("checkpoint STFT geometry disagrees with the corpus")
    _write_run_info(out_dir, config)
    scfg = SamplerConfig(nfe=args.nfe, seed=config["seed"], sigma=meta.sigma)
    log_lines = ["pair_id\tnfe_calls"]
    for idx, pair in enumerate(sorted(pairs, key=lambda p: p.pair_id)):
        before = net.n_evals
        spec = enhance(net, pair.noisy_spec, scfg, utt_index=idx)
        calls = net.n_evals - before
        wave = istft(spec, pair.stft, pair.n_samples)
        _write_enhanced(out_dir / f"{pair.pair_id}.enh", pair, spec, wave, args.nfe)
        log_lines.append(f"{pair.pair_id}\t{calls}")
    (out_dir / "enhance_log.tsv").write_text("\n".join(log_lines) + "\n")
    print(f"enhanced {len(pairs)} utterances at nfe={args.nfe} -> {out_dir}")
    return EXIT_OK


def _write_enhanced(path: Path, pair, spec: np.ndarray, wave: np.ndarray, nfe: int) -> None:
    import struct

    header = {
        "pair_id": pair.pair_id,
        "nfe": nfe,
        "n_samples": len(wave),
        "spec_shape": list(spec.shape),
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = b"".join(
        [
            b"ENHW",
            struct.pack("<I", 1),
            struct.pack("<Q", len(hjson)),
            hjson,
            spec.real.astype("<f8").tobytes(),
            spec.imag.astype("<f8").tobytes(),
            wave.astype("<f8").tobytes(),
        ]
    )
    path.write_bytes(blob)


def _parse_checkpoint_arg(arg: str) -> tuple[str, str]:
    if "=" in arg:
        label, path = arg.split("=", 1)
        return label, path
    return Path(arg).stem, arg


def cmd_eval(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    corpus = [p for p in load_corpus(args.corpus) if p.split in ("test", "ood")]
    models = []
    for arg in args.checkpoints:
        label, path = _parse_checkpoint_arg(arg)
        net, meta = load_checkpoint(path)
        models.append(EvalModel(label=label, net=net, meta=meta))
    if args.include_noisy:
        models.append(EvalModel(label="noisy"))
    rows = compare_models(models, corpus, config["sampler"]["nfe_list"], seed=config["seed"])
    _write_run_info(out_dir, config)
    write_report(rows, out_dir)
    print(report_table(rows))
    return _check_thresholds(config["thresholds"], rows)


def _row(rows: list[ReportRow], model: str, nfe: int, split: str) -> ReportRow | None:
    for r in rows:
        if r.model == model and r.nfe == nfe and r.split == split:
            return r
    return None


def _check_thresholds(thresholds: dict, rows: list[ReportRow]) -> int:
    """Optional CI gate: compare labelled flow/meanflow rows at nfe 1 and 5."""
    if not thresholds:
        return EXIT_OK
    ok = True
    gap = thresholds.get("min_si_sdr_gap_nfe1_db")
    if gap is not None:
        flow = _row(rows, "flow", 1, "test")
        mean = _row(rows, "meanflow", 1, "test")
        if flow is None or mean is None:
            print("threshold check skipped: need 'flow' and 'meanflow' labelled models")
            ok = False
        elif mean.si_sdr_db - flow.si_sdr_db < gap:
            print(
                f"threshold FAILED: meanflow@1 - flow@1 = "
                f"{mean.si_sdr_db - flow.si_sdr_db:.3f} dB < {gap} dB"
            )
            ok = False
    drop = thresholds.get("max_meanflow_nfe1_vs_nfe5_db")
    if drop is not None:
        one = _row(rows, "meanflow", 1, "test")
        five = _row(rows, "meanflow", 5, "test")
        if one is None or five is None:
            print("threshold check skipped: need meanflow rows at nfe 1 and 5")
            ok = False
        elif five.si_sdr_db - one.si_sdr_db > drop:
            print(
                f"threshold FAILED: meanflow@5 - meanflow@1 = "
                f"{five.si_sdr_db - one.si_sdr_db:.3f} dB > {drop} dB"
            )
            ok = False
    return EXIT_OK if ok else EXIT_THRESHOLD


def cmd_ablate_flow_ratio(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    _write_run_info(out_dir, config)
    ratios = sorted(float(r) for r in config["ablation"]["ratios"])
    if any(not 0.0 <= r <= 1.0 for r in ratios):
        raise ConfigError("ablation ratios must lie in [0, 1]")
    test_pairs = [p for p in load_corpus(args.corpus) if p.split in ("test", "ood")]
    lines = ["ratio\tnfe\tsplit\tsi_sdr_db\tlsd_db\tstatus"]
    for ratio in ratios:
        run_dir = out_dir / f"ratio_{ratio:g}"
        try:
            _, final = _run_meanflow(config, args.corpus, args.init_flow, run_dir, ratio)
        except TrainingDiverged as e:
            print(f"ratio {ratio:g}: diverged ({e})")
            for split in ("test", "ood"):
                lines.append(f"{ratio:g}\t1\t{split}\tnan\tnan\tdiverged")
            continue
        net, meta = load_checkpoint(final)
        rows = compare_models([EvalModel("meanflow", net, meta)], test_pairs, [1], config["seed"])
        for r in rows:
            lines.append(f"{ratio:g}\t1\t{r.split}\t{r.si_sdr_db:.4f}\t{r.lsd_db:.4f}\tok")
        print(f"ratio {ratio:g}: done")
    report = out_dir / "ablation.tsv"
    report.write_text("\n".join(lines) + "\n")
    print(f"ablation report: {report}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfe", description="flow/mean-flow enhancement pipeline"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("train-flow", help="train the flow-matching baseline")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_flow)

    p = sub.add_parser("train-meanflow", help="curriculum fine-tune a mean-flow model")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--init-flow", required=True, help="trained flow checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_meanflow)

    p = sub.add_parser("enhance", help="enhance a corpus split with a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--nfe", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("eval", help="compare checkpoints across NFEs")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoints", nargs="+", required=True, metavar="LABEL=PATH")
    p.add_argument("--include-noisy", action="store_true", help="score the noisy input too")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate-flow-ratio", help="train/evaluate one model per flow ratio")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--init-flow", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate_flow_ratio)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (
        ConfigError,
        FrontendError,
        NetworkError,
        CheckpointError,
        TrainingError,
        FileNotFoundError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
