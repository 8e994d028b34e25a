"""Print the fold-0 ablation table (200 episodes per row).

Takes about a minute on one core.
"""
from ampseg.backbone import init_backbone
from ampseg.protocol import make_folds, pretrain
from ampseg.scenarios import ABLATION_GRID, run_ablation

from _common import load_dataset

ds = load_dataset()
backbone = init_backbone()
fold = make_folds()[0]
bank = pretrain(backbone, ds, fold.train_classes)
runs = run_ablation(bank, backbone, ds, fold, 200, seed=0)

print(f"{'configuration':<22}{'k':>3}{'mIoU (%)':>10}")
for name, k, _ in ABLATION_GRID:
    print(f"{name:<22}{k:>3}{100 * runs[name].miou:>10.2f}")
