"""Command-line entry point: ``ampseg <command> [options]``.

Every command accepts ``--config FILE`` holding flat ``key = value`` lines
whose keys are the long option names (dashes or underscores). Values from
the command line win over the file; ``AMP_SEED`` in the environment replaces
the file's seed but not an explicit ``--seed``.

Each run writes ``records.jsonl`` (deterministic given config and seed) and
``summary.json`` holding the resolved config, aggregate metrics and a
``timestamp`` field that is the only non-reproducible value.
"""
import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from .backbone import BackboneSpec, init_backbone, load_backbone, save_backbone
from .exceptions import AmpError
from .metrics import write_jsonl
from .pnm import write_pgm
from .protocol import (PRETRAIN_EPOCHS, PRETRAIN_LR, Dataset, build_task_stream, make_folds,
                       pretrain, sample_episodes)
from .proxy import load_bank, save_bank
from .scenarios import (ABLATION_GRID, CONTINUAL_ALPHA, NAIVE_ITERATIONS, NAIVE_LR,
                        run_continual, run_fewshot, run_video)
from .segmenter import FewShotConfig
from .synthdata import GenSpec, VideoSpec, gen_dataset

log = logging.getLogger("ampseg")

BANK_META = "bank.json"


class UsageError(Exception):
    """Bad paths or inconsistent inputs; reported with exit status 2."""


# -- configuration -------------------------------------------------------------

def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


# option name -> (type, default, help); one table per command
COMMON = {
    "seed": (int, 0, "run seed"),
    "out": (str, None, "output directory"),
    "log_level": (str, "INFO", "logging level"),
}
DATA = {"data": (str, None, "dataset directory holding manifest.tsv")}
MODEL = {
    "backbone": (str, None, "backbone file written by pretrain"),
    "bank": (str, None, "classifier bank written by pretrain"),
}
FEWSHOT = {
    "fold": (int, 0, "fold index 0-3"),
    "fold_seed": (int, 0, "class permutation seed for the folds (0 = canonical)"),
    "k": (int, 1, "support images per episode"),
    "episodes": (int, 1000, "number of sampled episodes"),
    "alpha": (float, 0.26, "background adaptation rate"),
    "no_adapt": (_bool, False, "skip background adaptation"),
    "no_multires": (_bool, False, "score with the coarsest level only"),
    "no_imprint": (_bool, False, "start novel rows random (fine-tune only)"),
    "ft": (int, 0, "fine-tuning iterations on the support set"),
    "ft_lr": (float, 7.6e-5, "fine-tuning learning rate"),
    "workers": (int, 1, "episode-parallel worker processes"),
    "dump_predictions": (_bool, False, "write query predictions as PGM files"),
}
COMMANDS = {
    "gen-data": {
        "items_per_class": (int, 30, "items per class"),
        "image_size": (int, 64, "square image size, divisible by 8"),
        "max_distractors": (int, 1, "labelled distractor objects per image, 0-2"),
        "noise": (float, 0.03, "pixel noise standard deviation"),
    },
    "pretrain": {
        **DATA,
        "mode": (str, "fewshot", "fewshot: fold train classes; continual: stream base classes"),
        "fold": (int, 0, "fold index 0-3 (fewshot mode)"),
        "fold_seed": (int, 0, "class permutation seed for the folds"),
        "epochs": (int, PRETRAIN_EPOCHS, "passes over the training items"),
        "lr": (float, PRETRAIN_LR, "RMSProp learning rate"),
        "backbone_seed": (int, 0, "seed of the random backbone"),
    },
    "fewshot": {**DATA, **MODEL, **FEWSHOT},
    "ablate": {**DATA, **MODEL, **{k: v for k, v in FEWSHOT.items()
                                   if k in ("fold", "fold_seed", "workers")},
               "episodes": (int, 200, "episodes per grid row")},
    "continual": {
        **DATA,
        "seeds": (int, 5, "number of stream seeds, starting at --seed"),
        "method": (str, "both", "imprint, naive or both"),
        "alpha": (float, CONTINUAL_ALPHA, "adaptation rate of seen classes"),
        "naive_lr": (float, NAIVE_LR, "learning rate of the naive baseline"),
        "naive_iterations": (int, NAIVE_ITERATIONS, "baseline iterations per sample"),
        "epochs": (int, PRETRAIN_EPOCHS, "base-class pretraining epochs"),
        "lr": (float, PRETRAIN_LR, "base-class pretraining learning rate"),
        "backbone": (str, None, "backbone file (default: seeded random backbone)"),
    },
    "video": {
        "backbone": (str, None, "backbone file (default: seeded random backbone)"),
        "class_id": (int, 1, "object class of the clip"),
        "alpha_video": (float, 0.001, "self-adaptation rate"),
        "frames": (int, 60, "clip length"),
        "drift": (float, VideoSpec.drift, "per-frame colour drift"),
        "motion_y": (int, 0, "per-frame vertical shift in pixels"),
        "motion_x": (int, 1, "per-frame horizontal shift in pixels"),
        "image_size": (int, 64, "frame size"),
        "dump_predictions": (_bool, False, "write per-frame predictions as PGM files"),
    },
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ampseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        for key, (typ, default, text) in {**COMMON, **options}.items():
            flag = "--" + key.replace("_", "-")
            if typ is _bool:
                p.add_argument(flag, action="store_const", const=True, default=None, help=text)
            else:
                p.add_argument(flag, type=typ, default=None,
                               help=f"{text} (default: {default})")
    return parser


def resolve(args):
    """Merge defaults, config file, AMP_SEED and explicit flags, in that order."""
    options = {**COMMON, **COMMANDS[args.command]}
    cfg = {k: v[1] for k, v in options.items()}
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file {args.config} does not exist")
        for key, value in read_config(args.config).items():
            if key not in options:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            try:
                cfg[key] = options[key][0](value)
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from None
    if "AMP_SEED" in os.environ:
        try:
            cfg["seed"] = int(os.environ["AMP_SEED"])
        except ValueError:
            raise UsageError(f"AMP_SEED must be an integer, got {os.environ['AMP_SEED']!r}")
    for key in options:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    cfg["command"] = args.command
    return cfg


# -- helpers ---------------------------------------------------------------------

def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _out_dir(cfg):
    _require(cfg, "out")
    out = cfg["out"]
    if os.path.exists(out) and not os.path.isdir(out):
        raise UsageError(f"output path {out} exists and is not a directory")
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _dataset(cfg):
    _require(cfg, "data")
    if not os.path.isfile(os.path.join(cfg["data"], "manifest.tsv")):
        raise UsageError(f"no dataset (manifest.tsv) under {cfg['data']}")
    return Dataset.load(cfg["data"])


def _load_file(loader, path, what):
    if not path or not os.path.isfile(path):
        raise UsageError(f"{what} file {path} does not exist")
    return loader(path)


def _backbone(cfg):
    if cfg.get("backbone"):
        return _load_file(load_backbone, cfg["backbone"], "backbone")
    return init_backbone(BackboneSpec(seed=cfg.get("backbone_seed", 0)))


def _fold(cfg):
    if not 0 <= cfg["fold"] < 4:
        raise UsageError(f"fold must be 0-3, got {cfg['fold']}")
    return make_folds(cfg["fold_seed"])[cfg["fold"]]


def _model(cfg, fold):
    _require(cfg, "backbone", "bank")
    backbone = _load_file(load_backbone, cfg["backbone"], "backbone")
    bank = _load_file(load_bank, cfg["bank"], "bank")
    if bank.channels != backbone.spec.stage_channels:
        raise UsageError(f"bank channels {bank.channels} do not match backbone "
                         f"{backbone.spec.stage_channels}")
    meta_path = os.path.join(os.path.dirname(os.path.abspath(cfg["bank"])), BANK_META)
    if os.path.isfile(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("fold") != fold.fold_index or meta.get("fold_seed", 0) != cfg["fold_seed"]:
            raise UsageError(f"bank was pretrained for fold {meta.get('fold')}, "
                             f"run asks for fold {fold.fold_index}")
    leaked = set(bank.class_ids) & set(fold.test_classes)
    if leaked:
        raise UsageError(f"bank already holds test classes {sorted(leaked)} of fold "
                         f"{fold.fold_index}")
    return backbone, bank


def _fewshot_config(cfg):
    return FewShotConfig(alpha_bg=cfg["alpha"], ft_iterations=cfg["ft"],
                         ft_learning_rate=cfg["ft_lr"], multi_res=not cfg["no_multires"],
                         adaptation=not cfg["no_adapt"], imprint=not cfg["no_imprint"])


def _finish(out, cfg, records, summary):
    write_jsonl(os.path.join(out, "records.jsonl"), records)
    doc = {"config": cfg, "summary": summary,
           "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))


def _dump(out, name, labels):
    os.makedirs(os.path.join(out, "predictions"), exist_ok=True)
    write_pgm(os.path.join(out, "predictions", name), np.asarray(labels, dtype=np.uint8))


# -- commands --------------------------------------------------------------------

def cmd_gen_data(cfg):
    out = _out_dir(cfg)
    spec = GenSpec(cfg["seed"], cfg["image_size"], cfg["items_per_class"],
                   cfg["max_distractors"], cfg["noise"])
    ds = gen_dataset(spec, out)
    print(os.path.join(out, "manifest.tsv"))
    log.info("wrote %d items", len(ds))
    return 0


def cmd_pretrain(cfg):
    ds = _dataset(cfg)
    out = _out_dir(cfg)
    backbone = init_backbone(BackboneSpec(seed=cfg["backbone_seed"]))
    meta = {"mode": cfg["mode"], "epochs": cfg["epochs"], "lr": cfg["lr"], "seed": cfg["seed"],
            "backbone_seed": cfg["backbone_seed"]}
    if cfg["mode"] == "fewshot":
        fold = _fold(cfg)
        classes, indices = fold.train_classes, None
        meta.update(fold=fold.fold_index, fold_seed=cfg["fold_seed"],
                    test_classes=list(fold.test_classes))
    elif cfg["mode"] == "continual":
        indices, _ = ds.split()
        classes = build_task_stream(ds, cfg["seed"], indices=indices).base_classes
        meta.update(fold=None)
    else:
        raise UsageError(f"mode must be fewshot or continual, got {cfg['mode']!r}")
    bank = pretrain(backbone, ds, classes, cfg["epochs"], cfg["lr"], cfg["seed"], indices)
    meta["classes"] = list(bank.class_ids)
    save_backbone(backbone, os.path.join(out, "backbone.bin"))
    save_bank(bank, os.path.join(out, "bank.bin"))
    with open(os.path.join(out, BANK_META), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(meta, sort_keys=True))
    return 0


def cmd_fewshot(cfg):
    ds = _dataset(cfg)
    fold = _fold(cfg)
    backbone, bank = _model(cfg, fold)
    out = _out_dir(cfg)
    fs = _fewshot_config(cfg)
    episodes = sample_episodes(ds, fold, cfg["k"], cfg["episodes"], cfg["seed"])
    for i, e in enumerate(episodes):
        log.debug("episode %d: class %d, %d supports %s, query %d", i, e.novel_class, e.k,
                  e.support_ids, e.query_id)
    log.info("%d episodes, %d supports each", len(episodes), cfg["k"])
    run = run_fewshot(bank, backbone, episodes, fs, fold.test_classes, cfg["workers"])
    if cfg["dump_predictions"]:
        for i, pred in enumerate(run.predictions):
            _dump(out, f"episode_{i:05d}.pgm", pred)
    summary = {**run.summary(), "k": cfg["k"], "fold": fold.fold_index,
               "test_classes": list(fold.test_classes), "imprint": fs.imprint,
               "adaptation": fs.adaptation, "multi_res": fs.multi_res,
               "ft_iterations": fs.ft_iterations}
    _finish(out, cfg, run.records, summary)
    return 0


def cmd_ablate(cfg):
    from .scenarios import run_ablation

    ds = _dataset(cfg)
    fold = _fold(cfg)
    backbone, bank = _model(cfg, fold)
    out = _out_dir(cfg)
    runs = run_ablation(bank, backbone, ds, fold, cfg["episodes"], cfg["seed"], cfg["workers"])
    records = [r for name, _, _ in ABLATION_GRID for r in runs[name].records]
    summary = {"fold": fold.fold_index, "episodes": cfg["episodes"],
               "rows": [{"name": name, "k": k, "imprint": c.imprint, "adaptation": c.adaptation,
                         "multi_res": c.multi_res, "ft_iterations": c.ft_iterations,
                         "miou_fg": runs[name].miou, "miou_fg_bg": runs[name].miou_fg_bg}
                        for name, k, c in ABLATION_GRID]}
    _finish(out, cfg, records, summary)
    return 0


def cmd_continual(cfg):
    ds = _dataset(cfg)
    backbone = _backbone(cfg)
    out = _out_dir(cfg)
    methods = ("imprint", "naive") if cfg["method"] == "both" else (cfg["method"],)
    if any(m not in ("imprint", "naive") for m in methods):
        raise UsageError(f"method must be imprint, naive or both, got {cfg['method']!r}")
    if not 0.0 <= cfg["alpha"] <= 1.0:
        raise UsageError("alpha must lie in [0, 1]")
    records = []
    train, _ = ds.split()
    for seed in range(cfg["seed"], cfg["seed"] + cfg["seeds"]):
        stream = build_task_stream(ds, seed, indices=train)
        base = pretrain(backbone, ds, stream.base_classes, cfg["epochs"], cfg["lr"], seed, train)
        for method in methods:
            records += run_continual(ds, backbone, seed, method, cfg["alpha"], cfg["naive_lr"],
                                     cfg["naive_iterations"], base_bank=base)
            log.info("seed %d %s done", seed, method)
    curves = {}
    for method in methods:
        per_task = [[r["miou"] for r in records if r["method"] == method and r["task"] == t]
                    for t in range(5)]
        curves[method] = [float(np.mean(v)) for v in per_task]
    _finish(out, cfg, records, {"seeds": cfg["seeds"], "mean_miou_per_task": curves})
    return 0


def cmd_video(cfg):
    backbone = _backbone(cfg)
    out = _out_dir(cfg)
    if not 0.0 <= cfg["alpha_video"] <= 1.0:
        raise UsageError("alpha-video must lie in [0, 1]")
    spec = VideoSpec(cfg["seed"], cfg["frames"], cfg["drift"], (cfg["motion_y"], cfg["motion_x"]),
                     cfg["image_size"])
    records, adapted = run_video(backbone, spec, cfg["class_id"], cfg["alpha_video"])
    if cfg["dump_predictions"]:
        for r, pred in zip(records, adapted.predictions):
            _dump(out, f"frame_{r['frame']:03d}.pgm", pred)
    tail = records[-20:]
    summary = {"frames": spec.frames, "class_id": cfg["class_id"],
               "alpha_video": cfg["alpha_video"], "skipped_frames": adapted.skipped_frames,
               "mean_iou_adapted_last20": float(np.mean([r["iou_adapted"] for r in tail])),
               "mean_iou_frozen_last20": float(np.mean([r["iou_frozen"] for r in tail]))}
    _finish(out, cfg, records, summary)
    return 0


HANDLERS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "fewshot": cmd_fewshot,
            "ablate": cmd_ablate, "continual": cmd_continual, "video": cmd_video}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        logging.basicConfig(level=cfg["log_level"].upper(), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"ampseg {args.command}: {exc}", file=sys.stderr)
        return 2
    except (AmpError, ValueError) as exc:
        print(f"ampseg {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
