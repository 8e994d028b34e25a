"""Shared setup for the demo scripts: a cached synthetic dataset."""
import os
import tempfile

from ampseg.protocol import Dataset
from ampseg.synthdata import GenSpec, gen_dataset


def load_dataset(root=None):
    root = root or os.path.join(tempfile.gettempdir(), "ampseg-demo-data")
    if not os.path.exists(os.path.join(root, "manifest.tsv")):
        print(f"generating dataset in {root}")
        gen_dataset(GenSpec(), root)
    return Dataset.load(root)
