"""Probe: how many flow steps until SI-SDR beats noisy, and step timing."""

import sys
import time

import numpy as np

from meanflow_enhance.checkpoint import CheckpointMeta
from meanflow_enhance.frontend import CorpusConfig, StftConfig, build_corpus, pack_spec
from meanflow_enhance.metrics import EvalModel, compare_models
from meanflow_enhance.network import NetworkConfig, TimeEmbeddingConfig
from meanflow_enhance.training import TrainConfig, train

hidden = int(sys.argv[1]) if len(sys.argv) > 1 else 96
total_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 16000
probe_every = int(sys.argv[3]) if len(sys.argv) > 3 else 2000

stft_cfg = StftConfig()
pairs = build_corpus(0, CorpusConfig(), stft_cfg)
items = lambda split: [
    (pack_spec(p.clean_spec), pack_spec(p.noisy_spec)) for p in pairs if p.split == split
]
train_items, val_items = items("train"), items("val")
eval_pairs = [p for p in pairs if p.split == "test"]
net_cfg = NetworkConfig(
    n_bins=stft_cfg.n_bins, hidden=hidden, n_blocks=2,
    embed=TimeEmbeddingConfig(dim=128, fourier_scale=16.0), mode="flow",
)
meta = CheckpointMeta(stft=stft_cfg.to_dict())

net = None
done = 0
t0 = time.perf_counter()
while done < total_steps:
    # resumed segments go through the fine-tune path; keep scratch lr
    lr = float(sys.argv[4]) if len(sys.argv) > 4 else 1e-4
    tcfg = TrainConfig(seed=done + 1, steps=probe_every, val_every=200, lr_scratch=lr, lr_finetune=lr)
    res = train(
        "flow", train_items, val_items, tcfg,
        net_config=net_cfg, init_net=net,
    )
    net = res.net
    done += probe_every
    rows = compare_models([EvalModel("flow", net, meta)], eval_pairs, [1, 5], seed=0)
    cells = {r.nfe: r.si_sdr_db for r in rows}
    dt = time.perf_counter() - t0
    print(
        f"steps {done:6d}  val {res.stages[-1].best_val:10.4e}  "
        f"si@1 {cells[1]:7.3f}  si@5 {cells[5]:7.3f}  [{dt:6.1f}s, {dt/done*1e3:.2f} ms/step]"
    )
