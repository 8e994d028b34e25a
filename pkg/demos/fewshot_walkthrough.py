"""Walk through one 1-shot episode by hand, then score 100 episodes.

Run with ``python demos/fewshot_walkthrough.py``.
"""
import numpy as np

from ampseg.backbone import extract, init_backbone
from ampseg.metrics import iou
from ampseg.protocol import make_folds, pretrain, sample_episodes
from ampseg.proxy import adapt_or_imprint, nmap
from ampseg.scenarios import run_fewshot
from ampseg.segmenter import FewShotConfig, predict

from _common import load_dataset

ds = load_dataset()
backbone = init_backbone()
fold = make_folds()[0]
print("held-out classes:", fold.test_classes)

bank = pretrain(backbone, ds, fold.train_classes)
print("pretrained bank rows:", bank.class_ids)

episode = sample_episodes(ds, fold, k=1, count=1, seed=3)[0]
image, mask = episode.support[0]
proxy = nmap([extract(backbone, image)], [mask], episode.novel_class)
print("proxy norms per level:", [round(float(np.linalg.norm(v)), 6) for v in proxy.vectors])

episode_bank = adapt_or_imprint(bank, proxy, alpha=0.26)
pred, _ = predict(episode_bank, extract(backbone, episode.query[0]))
print(f"query IoU for class {episode.novel_class}:",
      round(iou(pred == episode.novel_class, episode.query[1] == episode.novel_class, True), 4))

episodes = sample_episodes(ds, fold, k=1, count=100, seed=0)
run = run_fewshot(bank, backbone, episodes, FewShotConfig(), fold.test_classes)
print("100-episode summary:", run.summary())
