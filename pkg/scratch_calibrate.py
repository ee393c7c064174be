"""Scratch calibration: run the full pipeline in-process and print metric cells."""

import time

import numpy as np

from meanflow_enhance.frontend import CorpusConfig, StftConfig, build_corpus, pack_spec
from meanflow_enhance.metrics import EvalModel, compare_models, report_table
from meanflow_enhance.network import NetworkConfig, TimeEmbeddingConfig, init_from_flow
from meanflow_enhance.training import CurriculumSchedule, TrainConfig, train
from meanflow_enhance.checkpoint import CheckpointMeta

t0 = time.perf_counter()
stft_cfg = StftConfig()
corpus_cfg = CorpusConfig()
pairs = build_corpus(0, corpus_cfg, stft_cfg)
items = lambda split: [
    (pack_spec(p.clean_spec), pack_spec(p.noisy_spec)) for p in pairs if p.split == split
]
train_items, val_items = items("train"), items("val")
print(f"corpus: {len(pairs)} pairs, frames {train_items[0][0].shape}, {time.perf_counter()-t0:.1f}s")

net_cfg = NetworkConfig(
    n_bins=stft_cfg.n_bins, hidden=128, n_blocks=2,
    embed=TimeEmbeddingConfig(dim=128, fourier_scale=16.0), mode="flow",
)
tcfg = TrainConfig(seed=0, steps=4000, val_every=100)

t1 = time.perf_counter()
flow_res = train("flow", train_items, val_items, tcfg, net_config=net_cfg)
print(f"flow: {time.perf_counter()-t1:.1f}s val {flow_res.stages[-1].best_val:.4e}")
for m in flow_res.metrics[::4]:
    print("  ", m["step"], m["loss"], m["val_loss"])

t1 = time.perf_counter()
mf_res = train(
    "meanflow", train_items, val_items, tcfg,
    schedule=CurriculumSchedule(steps_per_stage=500),
    init_net=init_from_flow(flow_res.net),
)
print(f"meanflow: {time.perf_counter()-t1:.1f}s")
for s in mf_res.stages:
    print(f"  stage {s.width}: best_val {s.best_val:.4e} maxw {s.max_sampled_width:.3f}")

meta = CheckpointMeta(stft=stft_cfg.to_dict())
eval_pairs = [p for p in pairs if p.split in ("test", "ood")]
t1 = time.perf_counter()
rows = compare_models(
    [EvalModel("flow", flow_res.net, meta), EvalModel("meanflow", mf_res.net, meta), EvalModel("noisy")],
    eval_pairs, [1, 2, 5], seed=0,
)
print(f"eval: {time.perf_counter()-t1:.1f}s")
print(report_table(rows))
print(f"total {time.perf_counter()-t0:.1f}s")
