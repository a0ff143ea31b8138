"""Command-line driver: ``docenhance <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Log verbosity comes from ``--log-level`` or the ``DOCENHANCE_LOG_LEVEL``
environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint as ckio
from .config import ConfigError, TrainConfig, apply_overrides, config_from_dict, degrade_spec_from_args, dump_config, load_config
from .data.degrade import KINDS, degrade
from .data.io import Record, SampleManifest, atomic_write_bytes, load_manifest, load_png, save_png
from .data.patches import Patch, augment, extract_patches, stitch_patches
from .diffusion import RestorationModel, TrainState, restore, train_step
from .metrics import evaluate, psnr
from .ocr.crnn import CRNN
from .ocr.finetune import extract_word_patches, finetune_step, freeze, pretrain_crnn, recognizer_cer
from .ocr.text import WordBox

log = logging.getLogger("docenhance")

LOG_ENV = "DOCENHANCE_LOG_LEVEL"
CHECKPOINT_NAME = "checkpoint.bin"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def is_validation(path: str, fraction: float = 0.1) -> bool:
    """Deterministic split: hash of the clean-image path, ``fraction`` held out."""
    h = int.from_bytes(hashlib.sha256(path.encode("utf-8")).digest()[:8], "big")
    return (h % 10_000) < round(fraction * 10_000)


@dataclass
class Example:
    clean: np.ndarray
    degraded: np.ndarray
    words: list
    name: str


def load_examples(manifest: SampleManifest) -> list:
    out = []
    for rec in manifest.records:
        clean = load_png(manifest.resolve(rec.clean)).astype(np.float32)
        deg = load_png(manifest.resolve(rec.degraded)).astype(np.float32)
        if clean.shape != deg.shape:
            raise ValueError(f"{rec.degraded} and {rec.clean} differ in shape")
        out.append(Example(clean, deg, list(rec.words or []), rec.clean))
    return out


def build_model(cfg: TrainConfig) -> RestorationModel:
    torch.manual_seed(cfg.seed)
    return RestorationModel(cfg.network_cfg("predictor"), cfg.network_cfg("denoiser"), cfg.time_cfg(), T=cfg.schedule.T)


def _stack(arrs):
    return torch.from_numpy(np.stack(arrs))[:, None]


def sample_batch(examples, rng: np.random.Generator, size: int, batch: int):
    idx = rng.integers(0, len(examples), batch)
    pairs = [augment((examples[i].clean, examples[i].degraded), rng, size) for i in idx]
    return _stack([p[0] for p in pairs]), _stack([p[1] for p in pairs])


def crop_words(words, r: int, c: int, size: int) -> list:
    """Boxes lying fully inside the crop, shifted into crop coordinates."""
    kept = []
    for w in words:
        x, y, bw, bh = w.bbox
        if x >= c and y >= r and x + bw <= c + size and y + bh <= r + size:
            kept.append(WordBox(w.text, (x - c, y - r, bw, bh)))
    return kept


def sample_word_batch(examples, rng: np.random.Generator, size: int, batch: int):
    """Plain random crops (no flips, so text stays readable) with their word boxes."""
    xs, ys, words = [], [], []
    for i in rng.integers(0, len(examples), batch):
        ex = examples[i]
        H, W = ex.clean.shape
        r, c = int(rng.integers(0, H - size + 1)), int(rng.integers(0, W - size + 1))
        xs.append(ex.clean[r:r + size, c:c + size])
        ys.append(ex.degraded[r:r + size, c:c + size])
        words.append(crop_words(ex.words, r, c, size))
    return _stack(xs), _stack(ys), words


def write_jsonl(fh, obj):
    fh.write(json.dumps(obj, sort_keys=True) + "\n")
    fh.flush()


def validate_psnr(model, val, cfg: TrainConfig, sched) -> dict:
    """Mean PSNR (dB, [0, 1] scale) of input and restored top-left patches of the validation images."""
    s = cfg.data.patch_size
    x = np.stack([ex.clean[:s, :s] for ex in val])
    y = np.stack([ex.degraded[:s, :s] for ex in val])
    model.eval()
    out = restore(torch.from_numpy(y)[:, None], model, cfg.sampler_spec(), seed=cfg.seed, sched=sched)[:, 0].numpy()
    mean = lambda a: float(np.mean([psnr((a[i] + 1) / 2, (x[i] + 1) / 2) for i in range(len(x))]))
    return {"val_psnr_input": mean(y), "val_psnr_restored": mean(out)}


def _load_training_data(cfg: TrainConfig):
    if not cfg.data.manifest:
        raise ConfigError("data.manifest: no training manifest configured")
    if not Path(cfg.data.manifest).is_file():
        raise ConfigError(f"data.manifest: file not found: {cfg.data.manifest}")
    try:
        examples = load_examples(load_manifest(cfg.data.manifest))
    except (ValueError, OSError) as exc:
        raise ConfigError(f"data.manifest: {exc}") from exc
    s = cfg.data.patch_size
    for ex in examples:
        if min(ex.clean.shape) < s:
            raise ConfigError(f"data.patch_size: {s} exceeds image {ex.name} of shape {ex.clean.shape}")
    train = [ex for ex in examples if not is_validation(ex.name, cfg.data.val_fraction)]
    val = [ex for ex in examples if is_validation(ex.name, cfg.data.val_fraction)]
    if not train:
        raise ConfigError("data.manifest: no training records after the validation split")
    return train, val


def _config_snapshot(cfg: TrainConfig) -> dict:
    return cfg.to_dict()


def _run_loop(cfg, state, rng, train, val, out_dir: Path, until: int, crnn=None, ft_from: Optional[int] = None):
    """Shared train/finetune loop; ``ft_from`` switches to finetune steps from that iteration."""
    sched, f = cfg.schedule_obj(), cfg.filters()
    s, bs, tc = cfg.data.patch_size, cfg.data.batch_size, cfg.train
    out_dir.mkdir(parents=True, exist_ok=True)
    frozen = None
    if crnn is not None:
        freeze(crnn)
        frozen = [p.detach().clone() for p in crnn.state_dict().values()]
    t0 = time.time()
    with open(out_dir / "train_log.jsonl", "a", encoding="utf-8") as fh:
        while state.iteration < until:
            it = state.iteration
            if ft_from is not None and it >= ft_from:
                x, y, words = sample_word_batch(train, rng, s, bs)
                _, rep = finetune_step((x, y, words), state, sched, crnn, f)
                phase = "finetune"
            else:
                _, rep = train_step(sample_batch(train, rng, s, bs), state, sched, f)
                phase = "train"
            done = state.iteration
            if done % tc.log_every == 0 or done == until:
                losses = {k: round(v, 6) for k, v in rep.as_dict().items()}
                write_jsonl(fh, {"iteration": done, "phase": phase, **losses})
                log.info("iter %d %s %s (%.1fs)", done, phase,
                         " ".join(f"{k}={v:.4f}" for k, v in losses.items()), time.time() - t0)
            if val and tc.eval_every and done % tc.eval_every == 0 and done != until:
                write_jsonl(fh, {"iteration": done, **validate_psnr(state.model, val, cfg, sched)})
            if tc.checkpoint_every and done % tc.checkpoint_every == 0 and done != until:
                ckio.save(out_dir / CHECKPOINT_NAME, ckio.pack_training(state, _config_snapshot(cfg), rng, crnn))
        if val:
            res = validate_psnr(state.model, val, cfg, sched)
            write_jsonl(fh, {"iteration": state.iteration, **res})
            log.info("validation psnr input %.3f restored %.3f", res["val_psnr_input"], res["val_psnr_restored"])
    if frozen is not None:
        if not all(torch.equal(a, b) for a, b in zip(frozen, crnn.state_dict().values())):
            raise RuntimeError("frozen recognizer parameters changed during finetuning")
    ckio.save(out_dir / CHECKPOINT_NAME, ckio.pack_training(state, _config_snapshot(cfg), rng, crnn))
    log.info("wrote %s at iteration %d", out_dir / CHECKPOINT_NAME, state.iteration)


def _load_crnn_arg(path) -> Optional[CRNN]:
    if path is None:
        return None
    crnn = ckio.load_crnn(ckio.load(path))
    if crnn is None:
        raise ConfigError(f"--crnn: {path} holds no recognizer")
    return crnn


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    train, val = _load_training_data(cfg)
    crnn = _load_crnn_arg(args.crnn)
    rng = np.random.default_rng(cfg.seed)
    state = TrainState.create(build_model(cfg), cfg.seed, cfg.train_options())
    if args.resume:
        ck = ckio.load(args.resume)
        ckio.restore_training(ck, state, rng)
        crnn = crnn or ckio.load_crnn(ck)
        log.info("resumed from %s at iteration %d", args.resume, state.iteration)
    ft_from = None
    if cfg.train.finetune:
        if crnn is None:
            raise ConfigError("train.finetune: enabled but no recognizer given (--crnn)")
        ft_from = cfg.train.finetune_from
    _run_loop(cfg, state, rng, train, val, Path(args.out), cfg.train.iterations, crnn, ft_from)
    return 0


def cmd_finetune(args) -> int:
    ck = ckio.load(args.checkpoint)
    base = json.loads(json.dumps(ck.config))
    cfg = load_config(args.config, args.set) if args.config else config_from_dict(apply_overrides(base, args.set))
    train, val = _load_training_data(cfg)
    crnn = _load_crnn_arg(args.crnn) or ckio.load_crnn(ck)
    if crnn is None:
        raise ConfigError("no recognizer: pass --crnn (see pretrain-ocr)")
    rng = np.random.default_rng(cfg.seed)
    state = TrainState.create(build_model(cfg), cfg.seed, cfg.train_options())
    ckio.restore_training(ck, state, rng)
    start = state.iteration
    _run_loop(cfg, state, rng, train, val, Path(args.out), start + cfg.train.finetune_iterations, crnn, start)
    return 0


def _restore_image(img: np.ndarray, model, cfg: TrainConfig, spec, seed: int, sched, chunk: int = 64) -> np.ndarray:
    patches = extract_patches(img, cfg.data.patch_size, cfg.data.overlap)
    outs = []
    for j in range(0, len(patches), chunk):
        part = patches[j:j + chunk]
        y = torch.from_numpy(np.stack([p.data for p in part]).astype(np.float32))[:, None]
        res = restore(y, model, spec, seed=seed + j, sched=sched)[:, 0].numpy()
        outs += [Patch(r, p.origin) for r, p in zip(res, part)]
    return stitch_patches(outs, img.shape)


def _sample_inputs(path: Path) -> list:
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG files in {path}")
        return files
    if path.is_file():
        man = load_manifest(path)
        return [man.resolve(r.degraded) for r in man.records]
    raise FileNotFoundError(f"input {path} does not exist")


def cmd_sample(args) -> int:
    ck = ckio.load(args.checkpoint)
    cfg = config_from_dict(apply_overrides(json.loads(json.dumps(ck.config)), args.set))
    spec = cfg.sampler_spec()
    sched = cfg.schedule_obj()
    model = ckio.load_model(ck, build_model(cfg)).eval()
    inputs = _sample_inputs(Path(args.input))
    out_dir = Path(args.out)
    for i, src in enumerate(inputs):
        img = load_png(src)
        res = _restore_image(img, model, cfg, spec, args.seed + 10_000 * i, sched)
        save_png(out_dir / (Path(src).stem + ".png"), res)
        log.info("restored %s", src)
    run = {"checkpoint": str(args.checkpoint), "iteration": ck.iteration, "seed": args.seed,
           "sampler": spec.kind, "steps": spec.steps, "order": spec.order, "spacing": spec.step_spacing,
           "patch_size": cfg.data.patch_size, "overlap": cfg.data.overlap,
           "inputs": [str(p) for p in inputs]}
    atomic_write_bytes(out_dir / "run_log.json", (json.dumps(run, indent=2, sort_keys=True) + "\n").encode())
    return 0


def cmd_eval(args) -> int:
    man = load_manifest(args.manifest)
    out_dir = Path(args.outputs)
    if not out_dir.is_dir() or not any(out_dir.glob("*.png")):
        raise FileNotFoundError(f"no restored PNGs in {out_dir}")
    restored = []
    for rec in man.records:
        p = out_dir / (Path(rec.degraded).stem + ".png")
        if not p.is_file():
            raise FileNotFoundError(f"no output for {rec.degraded} (expected {p})")
        restored.append(load_png(p))
    recognizer = _load_crnn_arg(args.crnn)
    report = evaluate(man, restored, args.mode, recognizer)
    text = report.to_text()
    sys.stdout.write(text)
    if args.report:
        atomic_write_bytes(args.report, text.encode("utf-8"))
    return 0


def cmd_render(args) -> int:
    """Render synthetic text pages plus word-box sidecars (``<stem>.words.json``)."""
    from .data.toy import toy_page

    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    for i in range(args.count):
        img, boxes = toy_page(rng, tuple(args.size), args.scale)
        save_png(out / f"page_{i:05d}.png", img)
        atomic_write_bytes(out / f"page_{i:05d}.words.json",
                           json.dumps([b.to_dict() for b in boxes], sort_keys=True).encode("utf-8"))
    log.info("rendered %d pages into %s", args.count, out)
    return 0


def cmd_degrade(args) -> int:
    spec = degrade_spec_from_args(kind=args.kind, sigma=args.sigma, kernel_size=args.kernel_size,
                                  length=args.length, angle=args.angle, stain=args.stain, bleed=args.bleed,
                                  noise=args.noise, seed=args.seed)
    clean_dir, out = Path(args.clean_dir), Path(args.out)
    files = sorted(p for p in clean_dir.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files in {clean_dir}")
    manifest_path = Path(args.manifest) if args.manifest else out / "manifest.jsonl"
    root = manifest_path.parent.resolve()
    records = []
    for i, src in enumerate(files):
        img = load_png(src)
        res = degrade(img, replace(spec, seed=spec.seed + i))
        dst = out / src.name
        save_png(dst, res)
        words = None
        side = src.with_suffix(".words.json")
        if side.is_file():
            words = [WordBox.from_dict(d) for d in json.loads(side.read_text(encoding="utf-8"))]
        records.append(Record(os.path.relpath(dst.resolve(), root), os.path.relpath(src.resolve(), root), words))
    SampleManifest(records, root).save(manifest_path)
    log.info("degraded %d images (%s); manifest %s", len(files), spec.kind, manifest_path)
    return 0


def cmd_pretrain_ocr(args) -> int:
    cfg = load_config(args.config, args.set)
    man = load_manifest(args.manifest)
    c = cfg.crnn_cfg()
    train, held = [], []
    for rec in man.records:
        if not rec.words:
            continue
        img = torch.from_numpy(load_png(man.resolve(rec.clean)).astype(np.float32))
        patches = extract_word_patches(img, rec.words, c.height, c.frame_stride, c.alphabet)
        items = [(p.numpy(), w.text) for p, w in zip(patches, rec.words)]
        (held if is_validation(rec.clean, cfg.data.val_fraction) else train).extend(items)
    if not train:
        raise ConfigError("manifest holds no word labels to pretrain on")
    model = pretrain_crnn(train, cfg.crnn.pretrain_epochs, c, lr=cfg.crnn.pretrain_lr,
                          batch_size=cfg.crnn.pretrain_batch_size, seed=cfg.seed)
    train_cer = recognizer_cer(model, train)
    msg = f"crnn words={len(train)} train_cer={train_cer:.3f}"
    if held:
        msg += f" heldout_words={len(held)} heldout_cer={recognizer_cer(model, held):.3f}"
    print(msg)
    ckio.save(args.out, ckio.pack_crnn(model, cfg.to_dict()))
    return 0


def cmd_describe(args) -> int:
    from .nafnet import count_parameters

    cfg = load_config(args.config, args.set)
    model = build_model(cfg)
    sys.stdout.write(dump_config(cfg))
    counts = {"initial_predictor": count_parameters(model.predictor), "denoiser": count_parameters(model.denoiser),
              "crnn": count_parameters(CRNN(cfg.crnn_cfg()))}
    counts["total_restoration"] = counts["initial_predictor"] + counts["denoiser"]
    for k, v in counts.items():
        print(f"# params {k}: {v}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="docenhance", description="Diffusion-based document enhancement.")
    p.add_argument("--threads", type=int, default=None, help="cap on intra-op threads")
    p.add_argument("--log-level", default=None, help=f"logging level (default from ${LOG_ENV} or INFO)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="YAML configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set train.iterations=50")

    sp = sub.add_parser("train", help="joint training of predictor and denoiser")
    with_config(sp)
    sp.add_argument("--out", required=True, help="run directory (checkpoint and logs)")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--crnn", help="recognizer checkpoint for the finetuning phase")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("finetune", help="OCR-guided finetuning from a checkpoint")
    with_config(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--crnn", help="recognizer checkpoint (if not stored in --checkpoint)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("sample", help="restore images with a trained checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="directory of PNGs or a manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override sampler/data keys, e.g. --set sampler.steps=10")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="score restored images against a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--outputs", required=True, help="directory with restored PNGs named like the degraded inputs")
    sp.add_argument("--mode", choices=("deblur", "binarize"), default="deblur")
    sp.add_argument("--crnn", help="recognizer checkpoint for CER")
    sp.add_argument("--report", help="also write the report here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("render", help="render synthetic text pages with word boxes")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=64)
    sp.add_argument("--size", type=int, nargs=2, default=(32, 32), metavar=("H", "W"))
    sp.add_argument("--scale", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("degrade", help="synthesize degraded copies and a manifest")
    sp.add_argument("--clean-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifest", help="manifest path (default OUT/manifest.jsonl)")
    sp.add_argument("--kind", choices=KINDS, default="gaussian_blur")
    for name, typ in (("sigma", float), ("kernel-size", int), ("length", float), ("angle", float),
                      ("stain", float), ("bleed", float), ("noise", float)):
        sp.add_argument(f"--{name}", type=typ, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_degrade)

    sp = sub.add_parser("pretrain-ocr", help="pretrain the CRNN recognizer on clean word crops")
    with_config(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="recognizer checkpoint path")
    sp.set_defaults(func=cmd_pretrain_ocr)

    sp = sub.add_parser("describe", help="print the resolved config and parameter counts")
    with_config(sp)
    sp.set_defaults(func=cmd_describe)
    return p


def _setup_logging(level: Optional[str]):
    name = (level or os.environ.get(LOG_ENV) or "INFO").upper()
    if not isinstance(logging.getLevelName(name), int):
        raise UsageError(f"unknown log level {name!r}")
    logging.basicConfig(level=name, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        _setup_logging(args.log_level)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be positive")
            torch.set_num_threads(args.threads)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"docenhance: error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return 1
    except (ckio.CheckpointError, OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
