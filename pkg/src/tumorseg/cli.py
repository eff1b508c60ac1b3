"""Command-line front end: phantom, train, predict, evaluate, crossval, augment.

Exit codes: 0 success, 1 invalid configuration, 2 runtime or data error.
Every command validates its whole configuration before touching the output
directory.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .augment import AugmentationSpec, augment_arrays
from .data import (CaseRecord, TASK_MODALITY, VolumeFormatError, extract_slices,
                   generate_phantom, kfold_by_cohort, load_case, load_volume, normalize,
                   read_manifest, save_volume, write_manifest)
from .metrics import REGIONS, aggregate, evaluate_case
from .optim import TrainConfig, train, write_loss_log
from .unet import (CheckpointError, UNetConfig, build_unet, load_checkpoint, predict_mask,
                   save_checkpoint)

logger = logging.getLogger("tumorseg")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class RunConfig:
    model: UNetConfig = field(default_factory=lambda: UNetConfig(num_blocks=5, base_filters=64))
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentationSpec = field(default_factory=AugmentationSpec)
    task: str = "complete"
    manifest: str | None = None
    out: str | None = None
    seed: int = 0
    folds: int = 5
    deterministic: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        cfg = cls()
        if "model" in d:
            cfg.model = UNetConfig(**d.pop("model"))
        if "train" in d:
            cfg.train = TrainConfig(**d.pop("train"))
        if "augment" in d:
            aug = dict(d.pop("augment"))
            if "gamma_range" in aug:
                aug["gamma_range"] = tuple(aug["gamma_range"])
            cfg.augment = AugmentationSpec(**aug)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError([f"unknown config keys: {sorted(unknown)}"])
        for k, v in d.items():
            setattr(cfg, k, v)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def errors(self, need_manifest: bool = True) -> list[str]:
        errs = []
        # input_size is taken from the data; only the rest of the model is checked here
        errs += [e for e in self.model.errors() if not e.startswith("input_size")]
        errs += self.train.errors()
        errs += self.augment.errors()
        if self.task not in REGIONS:
            errs.append(f"task must be one of {list(REGIONS)}, got {self.task!r}")
        if need_manifest:
            if not self.manifest:
                errs.append("a manifest is required (--manifest)")
            elif not Path(self.manifest).is_file():
                errs.append(f"manifest not found: {self.manifest}")
        if not self.out:
            errs.append("an output directory is required (--out)")
        if self.folds < 2:
            errs.append(f"folds must be >= 2, got {self.folds}")
        return errs


# --------------------------------------------------------------------------
# argument handling

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--task", choices=list(REGIONS))
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-threaded, byte-reproducible outputs")
    p.add_argument("-v", "--verbose", action="store_true")


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--num-blocks", type=int)
    p.add_argument("--base-filters", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--no-augment", action="store_true", help="disable every augmentation")
    p.add_argument("--no-elastic", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tumorseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic cases and a manifest")
    _common(p)
    p.add_argument("--n-cases", type=int, default=10)
    p.add_argument("--size", type=int, nargs=3, default=[64, 64, 16], metavar=("X", "Y", "Z"))

    p = sub.add_parser("train", help="train one task model on every manifest case")
    _common(p)
    _training_flags(p)

    p = sub.add_parser("predict", help="write binary masks for every manifest case")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")

    p = sub.add_parser("evaluate", help="score predicted masks against manifest labels")
    _common(p)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--manifest")

    p = sub.add_parser("crossval", help="k-fold cross-validation per cohort")
    _common(p)
    _training_flags(p)
    p.add_argument("--folds", type=int)

    p = sub.add_parser("augment", help="write before/after PGM previews of one slice")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--case", required=True)
    p.add_argument("--slice", type=int, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-elastic", action="store_true")
    p.add_argument("--identity", action="store_true",
                   help="disable flips, rotation, shift, shear, zoom and brightness")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc}"]) from exc
    get = lambda name: getattr(args, name, None)
    for attr in ("seed", "out", "task", "manifest", "folds", "deterministic"):
        if get(attr) is not None:
            setattr(cfg, attr, get(attr))
    tr = {"max_epochs": get("epochs"), "learning_rate": get("lr"), "batch_size": get("batch_size")}
    cfg.train = replace(cfg.train, **{k: v for k, v in tr.items() if v is not None})
    cfg.train = replace(cfg.train, seed=cfg.seed)
    mo = {"num_blocks": get("num_blocks"), "base_filters": get("base_filters"),
          "dropout_rate": get("dropout"), "l2_lambda": get("l2")}
    cfg.model = replace(cfg.model, **{k: v for k, v in mo.items() if v is not None})
    if get("l2") is not None:
        cfg.train = replace(cfg.train, l2_lambda=get("l2"))
    if get("no_augment"):
        cfg.augment = AugmentationSpec.disabled()
    if get("no_elastic"):
        cfg.augment = replace(cfg.augment, elastic=False)
    if get("identity"):
        cfg.augment = replace(cfg.augment, flip=False, rotate=False, shift=False, shear=False,
                              zoom=False, brightness=False)
    if get("alpha") is not None:
        cfg.augment = replace(cfg.augment, elastic_alpha=get("alpha"))
    if get("sigma") is not None:
        cfg.augment = replace(cfg.augment, elastic_sigma=get("sigma"))
    return cfg


@contextlib.contextmanager
def _thread_limit(deterministic: bool):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# --------------------------------------------------------------------------
# commands

def cmd_phantom(cfg: RunConfig, n_cases: int, size) -> Path:
    errs = []
    if n_cases < 1:
        errs.append(f"--n-cases must be positive, got {n_cases}")
    if not cfg.out:
        errs.append("an output directory is required (--out)")
    if len(size) != 3 or min(size) < 4:
        errs.append(f"--size needs three extents >= 4, got {size}")
    if errs:
        raise ConfigError(errs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_cases):
        # alternate cohorts so both can be cross-validated independently
        cohort = "HGG" if i % 2 == 0 else "LGG"
        case = f"case{i:03d}"
        vols, labels = generate_phantom(size, seed=np.random.SeedSequence([cfg.seed, i]),
                                        cohort=cohort)
        paths = {}
        for key, vol in (("flair", vols["flair"]), ("t1c", vols["t1c"]), ("labels", labels)):
            paths[key] = out / f"{case}_{key}.mvol"
            save_volume(vol, paths[key])
        records.append(CaseRecord(case, cohort, str(paths["flair"]), str(paths["t1c"]),
                                  str(paths["labels"])))
    manifest = out / "manifest.jsonl"
    write_manifest(records, manifest)
    logger.info("wrote %d cases to %s", n_cases, out)
    return manifest


def _load_slices(records: list[CaseRecord], task: str):
    samples, size = [], None
    for rec in records:
        vols, labels = load_case(rec)
        shape = vols[TASK_MODALITY[task]].shape[:2]
        if size is None:
            size = shape
        elif shape != size:
            raise ValueError(f"case {rec.case}: in-plane size {shape} differs from {size}")
        samples += extract_slices(vols, labels, task, rec.case)
    return samples, size


def _model_config(cfg: RunConfig, size) -> UNetConfig:
    mc = replace(cfg.model, input_size=tuple(size))
    errs = mc.errors()
    if errs:
        raise ConfigError(errs)
    return mc


def _fit(cfg: RunConfig, records: list[CaseRecord], out: Path, tag: str = "model"):
    samples, size = _load_slices(records, cfg.task)
    if not samples:
        raise ValueError("no non-empty slices in the training cases")
    model = build_unet(_model_config(cfg, size), seed=cfg.seed)
    history = train(model, samples, cfg.augment, cfg.train)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / f"{tag}.unet", extra={"task": cfg.task})
    write_loss_log(history, out / f"{tag}_loss.csv", include_time=not cfg.deterministic)
    return model, history


def cmd_train(cfg: RunConfig):
    errs = cfg.errors()
    if errs:
        raise ConfigError(errs)
    records = read_manifest(cfg.manifest)
    return _fit(cfg, records, Path(cfg.out), f"model_{cfg.task}")


def _predict_case(model, rec: CaseRecord, task: str) -> np.ndarray:
    vols, _ = load_case(rec)
    vol = vols[TASK_MODALITY[task]]
    if tuple(vol.shape[:2]) != model.config.input_size:
        raise ValueError(f"case {rec.case}: in-plane size {vol.shape[:2]} does not match "
                         f"checkpoint input size {model.config.input_size}")
    img = normalize(vol).data
    masks = predict_mask(model, np.moveaxis(img, 2, 0))
    return np.moveaxis(masks, 0, 2).astype(np.uint8)


def cmd_predict(cfg: RunConfig, checkpoint: str) -> list[Path]:
    errs = cfg.errors()
    if not Path(checkpoint).is_file():
        errs.append(f"checkpoint not found: {checkpoint}")
    if errs:
        raise ConfigError(errs)
    model, extra = load_checkpoint(checkpoint)
    task = extra.get("task", cfg.task)
    records = read_manifest(cfg.manifest)
    for rec in records:
        vol = load_volume(rec.flair if TASK_MODALITY[task] == "flair" else rec.t1c)
        if tuple(vol.shape[:2]) != model.config.input_size:
            raise ValueError(f"case {rec.case}: in-plane size {vol.shape[:2]} does not match "
                             f"checkpoint input size {model.config.input_size}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in records:
        start = time.perf_counter()
        mask = _predict_case(model, rec, task)
        path = out / f"{rec.case}_{task}.mvol"
        save_volume(mask, path)
        written.append(path)
        logger.info("%s: %.2fs", rec.case, time.perf_counter() - start)
    return written


def cmd_evaluate(cfg: RunConfig, pred_dir: str):
    errs = cfg.errors()
    if errs:
        raise ConfigError(errs)
    records = read_manifest(cfg.manifest)
    pred_dir = Path(pred_dir)
    tasks = [t for t in REGIONS if any((pred_dir / f"{r.case}_{t}.mvol").exists() for r in records)]
    if not tasks:
        raise FileNotFoundError(f"no predictions found in {pred_dir}")
    missing = [f"{r.case}_{t}" for r in records for t in tasks
               if not (pred_dir / f"{r.case}_{t}.mvol").exists()]
    if missing:
        raise FileNotFoundError(f"missing predictions: {', '.join(missing)}")
    results = {}
    for r in records:
        truth = load_volume(r.labels).data
        preds = {t: load_volume(pred_dir / f"{r.case}_{t}.mvol").data for t in tasks}
        results[r.case] = evaluate_case(preds, truth)
    report = aggregate(results, {"all": [r.case for r in records]},
                       {r.case: r.cohort for r in records})
    _write_report(report, Path(cfg.out))
    return report


def _write_report(report, out: Path, stem: str = "report") -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    (out / f"{stem}.csv").write_text(report.to_csv())


def cmd_crossval(cfg: RunConfig):
    errs = cfg.errors()
    if errs:
        raise ConfigError(errs)
    records = read_manifest(cfg.manifest)
    by_case = {r.case: r for r in records}
    try:
        splits = kfold_by_cohort(records, cfg.folds, cfg.seed)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    out = Path(cfg.out)
    results, folds = {}, {}
    cohorts = {r.case: r.cohort for r in records}
    for cohort, cohort_folds in splits.items():
        for i, (train_ids, test_ids) in enumerate(cohort_folds):
            name = f"{cohort}-fold{i}"
            fold_dir = out / name
            model, _ = _fit(cfg, [by_case[c] for c in train_ids], fold_dir, "model")
            for cid in test_ids:
                mask = _predict_case(model, by_case[cid], cfg.task)
                save_volume(mask, fold_dir / f"{cid}_{cfg.task}.mvol")
                truth = load_volume(by_case[cid].labels).data
                results[cid] = evaluate_case({cfg.task: mask}, truth)
            folds[name] = list(test_ids)
            _write_report(aggregate(results, folds, cohorts), out, "partial_report")
            logger.info("%s done", name)
    report = aggregate(results, folds, cohorts)
    _write_report(report, out)
    return report


def _write_pgm(path: Path, array: np.ndarray, maxval: int) -> None:
    a = np.asarray(array)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode("ascii"))
        f.write(a.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], np.uint8, w * h).reshape(h, w)


def cmd_augment(cfg: RunConfig, case: str, slice_index: int) -> list[Path]:
    errs = cfg.errors()
    if errs:
        raise ConfigError(errs)
    records = {r.case: r for r in read_manifest(cfg.manifest)}
    if case not in records:
        raise ValueError(f"case {case!r} not in manifest")
    vols, labels = load_case(records[case])
    vol = vols[TASK_MODALITY[cfg.task]]
    if not 0 <= slice_index < vol.shape[2]:
        raise ValueError(f"slice {slice_index} out of range for {case} with {vol.shape[2]} slices")
    image = normalize(vol).data[:, :, slice_index]
    label = np.asarray(labels.data[:, :, slice_index])
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, slice_index]))
    aug_img, aug_lab = augment_arrays(image, label, cfg.augment, rng)
    lo, hi = image.min(), image.max()
    scale = lambda a: np.clip(np.rint((a - lo) / (hi - lo or 1) * 255), 0, 255)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, arr, maxval in (("original_image", scale(image), 255), ("original_label", label, 4),
                              ("augmented_image", scale(aug_img), 255),
                              ("augmented_label", aug_lab, 4)):
        paths.append(out / f"{stem}.pgm")
        _write_pgm(paths[-1], arr, maxval)
    return paths


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        with _thread_limit(bool(cfg.deterministic)):
            if args.command == "phantom":
                cmd_phantom(cfg, args.n_cases, args.size)
            elif args.command == "train":
                cmd_train(cfg)
            elif args.command == "predict":
                cmd_predict(cfg, args.checkpoint)
            elif args.command == "evaluate":
                print(cmd_evaluate(cfg, args.pred_dir).to_csv(), end="")
            elif args.command == "crossval":
                print(cmd_crossval(cfg).to_csv(), end="")
            elif args.command == "augment":
                cmd_augment(cfg, args.case, args.slice)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, VolumeFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
