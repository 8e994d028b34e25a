"""Segmentation of new classes from masked feature proxies: few-shot, continual and video."""
from .backbone import Backbone, BackboneSpec, FeaturePyramid, extract, init_backbone
from .exceptions import AmpError, EmptyMaskError, FormatError, ShapeError, ZeroVectorError
from .proxy import (BACKGROUND, ClassifierBank, Proxy, adapt, adapt_or_imprint, imprint,
                    nmap)
from .segmenter import (FewShotConfig, OptimizerState, finetune, predict,
                        run_fewshot_episode, score, self_adapt)

__version__ = "0.1.0"
