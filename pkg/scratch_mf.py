"""Probe: flow training then mean-flow curriculum; print the metric cells."""

import sys
import time

import numpy as np

from meanflow_enhance.checkpoint import CheckpointMeta
from meanflow_enhance.frontend import CorpusConfig, StftConfig, build_corpus, pack_spec
from meanflow_enhance.metrics import EvalModel, compare_models, report_table
from meanflow_enhance.network import NetworkConfig, TimeEmbeddingConfig, init_from_flow
from meanflow_enhance.training import CurriculumSchedule, TrainConfig, train

flow_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 12000
stage_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
lr = float(sys.argv[3]) if len(sys.argv) > 3 else 5e-4
lr_ft = float(sys.argv[4]) if len(sys.argv) > 4 else 5e-5

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

t0 = time.perf_counter()
tcfg = TrainConfig(seed=0, steps=flow_steps, val_every=200, lr_scratch=lr, lr_finetune=lr_ft)
flow_res = train("flow", train_items, val_items, tcfg, net_config=net_cfg)
print(f"flow {flow_steps} steps: {time.perf_counter()-t0:.0f}s val {flow_res.stages[-1].best_val:.3e}")

t1 = time.perf_counter()
mf_res = train(
    "meanflow", train_items, val_items, tcfg,
    schedule=CurriculumSchedule(steps_per_stage=stage_steps),
    init_net=init_from_flow(flow_res.net),
)
print(f"meanflow 5x{stage_steps}: {time.perf_counter()-t1:.0f}s")
for s in mf_res.stages:
    print(f"  stage {s.width}: best_val {s.best_val:.3e} maxw {s.max_sampled_width:.3f}")

rows = compare_models(
    [EvalModel("flow", flow_res.net, meta), EvalModel("meanflow", mf_res.net, meta), EvalModel("noisy")],
    eval_pairs, [1, 2, 5], seed=0,
)
print(report_table(rows))
print(f"total {time.perf_counter()-t0:.0f}s")
