"""Probe variants of mean-flow fine-tuning from a cached converged flow model."""

import os
import sys
import time

import numpy as np

from meanflow_enhance.checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from meanflow_enhance.frontend import CorpusConfig, StftConfig, build_corpus, pack_spec
from meanflow_enhance.metrics import EvalModel, compare_models, report_table
from meanflow_enhance.network import NetworkConfig, TimeEmbeddingConfig, init_from_flow
from meanflow_enhance.training import CurriculumSchedule, TrainConfig, train

flow_steps = int(sys.argv[1])
stage_steps = int(sys.argv[2])
lr = float(sys.argv[3])
lr_ft = float(sys.argv[4])
ratio = float(sys.argv[5]) if len(sys.argv) > 5 else 0.75

stft_cfg = StftConfig()
pairs = build_corpus(0, CorpusConfig(), stft_cfg)
items = lambda split: [
    (pack_spec(p.clean_spec), pack_spec(p.noisy_spec)) for p in pairs if p.split == split
]
train_items, val_items = items("train"), items("val")
eval_pairs = [p for p in pairs if p.split in ("test", "ood")]
net_cfg = NetworkConfig(
    n_bins=stft_cfg.n_bins, hidden=256, n_blocks=2,
    embed=TimeEmbeddingConfig(dim=128, fourier_scale=16.0), mode="flow",
)
meta = CheckpointMeta(stft=stft_cfg.to_dict())

ckpt = f"/tmp/flow_{flow_steps}_{lr:g}.ckpt"
t0 = time.perf_counter()
if os.path.exists(ckpt):
    flow_net, _ = load_checkpoint(ckpt)
    print(f"loaded {ckpt}")
else:
    tcfg = TrainConfig(seed=0, steps=flow_steps, val_every=200, lr_scratch=lr)
    flow_res = train("flow", train_items, val_items, tcfg, net_config=net_cfg)
    flow_net = flow_res.net
    save_checkpoint(ckpt, flow_net, meta)
    print(f"flow {flow_steps} steps: {time.perf_counter()-t0:.0f}s val {flow_res.stages[-1].best_val:.3e}")

t1 = time.perf_counter()
tcfg = TrainConfig(seed=0, val_every=200, lr_finetune=lr_ft, flow_ratio=ratio)
mf_res = train(
    "meanflow", train_items, val_items, tcfg,
    schedule=CurriculumSchedule(steps_per_stage=stage_steps),
    init_net=init_from_flow(flow_net),
)
print(f"meanflow 5x{stage_steps} lr_ft={lr_ft:g} ratio={ratio:g}: {time.perf_counter()-t1:.0f}s")
for s in mf_res.stages:
    print(f"  stage {s.width}: best_val {s.best_val:.3e}")

rows = compare_models(
    [EvalModel("flow", flow_net, meta), EvalModel("meanflow", mf_res.net, meta)],
    eval_pairs, [1, 2, 5], seed=0,
)
print(report_table(rows))
print(f"total {time.perf_counter()-t0:.0f}s")
