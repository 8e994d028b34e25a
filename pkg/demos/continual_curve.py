"""Class-incremental stream: imprinting against naive fine-tuning.

Averages the per-task mIoU over five stream seeds.
"""
import numpy as np

from ampseg.backbone import init_backbone
from ampseg.protocol import build_task_stream, pretrain
from ampseg.scenarios import run_continual

from _common import load_dataset

ds = load_dataset()
backbone = init_backbone()
train, _ = ds.split()
curves = {"imprint": [], "naive": []}
for seed in range(5):
    stream = build_task_stream(ds, seed, indices=train)
    print(f"seed {seed}: base {stream.base_classes}, tasks "
          f"{[t.classes for t in stream.tasks]}")
    base = pretrain(backbone, ds, stream.base_classes, seed=seed, indices=train)
    for method in curves:
        curves[method].append([r["miou"] for r in run_continual(ds, backbone, seed, method,
                                                                 base_bank=base)])

for method, values in curves.items():
    print(f"{method:<8}", " ".join(f"{v:.3f}" for v in np.mean(values, axis=0)))
