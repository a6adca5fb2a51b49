"""Command-line entry point: generate, train, eval, handover, sweep.

Every run writes its outputs plus one ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, ScenarioConfig, load_scenario
from .dataset import DS_VERSION, DatasetError, DatasetSplit, generate_dataset, load_dataset, save_dataset
from .numcore.checkpoint import CKPT_VERSION, CheckpointError, load_checkpoint
from .presets import PRESETS

MANIFEST_NAME = "manifest.json"
_SPLITS = ("train", "validation", "test")


class CLIError(Exception):
    """A user-facing failure; the message is printed and the exit status is 1."""


@dataclasses.dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    artifacts: dict[str, str]
    wall_clock_s: float
    version: str

    def write(self, out_dir: Path) -> Path:
        path = out_dir / MANIFEST_NAME
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _version_string() -> str:
    return f"mblab {__version__} (dataset v{DS_VERSION}, checkpoint v{CKPT_VERSION})"


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _scenario(args, default_preset: str) -> ScenarioConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            if args.config in PRESETS:
                cfg = PRESETS[args.config]()
            else:
                raise CLIError(f"config {args.config!r} is neither a file nor a preset ({', '.join(PRESETS)})")
        else:
            cfg = load_scenario(path)
    else:
        cfg = PRESETS[default_preset]()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _read_mapping(path, allowed: dict) -> dict:
    """YAML mapping whose keys must all appear in ``allowed`` (key -> type)."""
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    problems = [f"{k}: unknown key (allowed: {', '.join(sorted(allowed))})" for k in data if k not in allowed]
    for k, v in data.items():
        tp = allowed.get(k)
        if tp is float and isinstance(v, int) and not isinstance(v, bool):
            data[k] = float(v)
        elif tp is list and isinstance(v, list):
            pass
        elif tp is not None and (not isinstance(v, tp) or (tp is int and isinstance(v, bool))):
            problems.append(f"{k}: expected {tp.__name__}, got {type(v).__name__}")
    if problems:
        raise ConfigError(problems)
    return data


_TRAIN_KEYS = {
    "beam_encoding": str, "n_antennas": int, "max_boxes": int, "batch_size": int, "lr_cnn": float, "lr_vit": float,
    "lr_head": float, "clip_threshold": float, "epochs": int, "seed": int,
    "miss_prob": float, "jitter": float, "detector_seed": int,
}
_SWEEP_KEYS = {"scenario": str, "p": list, "f": list, "epochs": int, "seed": int, "n_scenes": int}


# ---------------------------------------------------------------------------
# estimators and inputs
# ---------------------------------------------------------------------------

def _check_shapes(split: DatasetSplit, n_frames: int, image_size: int, n_beams: int) -> None:
    problems = []
    if split.n_beams != n_beams:
        problems.append(f"dataset has N={split.n_beams} beams but the model expects N={n_beams}")
    if split.p != n_frames:
        problems.append(f"dataset has p={split.p} frames per window but the model expects {n_frames}")
    if image_size is not None and split.image_shape != (image_size, image_size):
        problems.append(f"dataset images are {split.image_shape[0]}x{split.image_shape[1]} "
                        f"but the model expects {image_size}x{image_size}")
    if problems:
        raise CLIError("dataset/model shape mismatch: " + "; ".join(problems))


def _features(est, samples, detector: dict):
    from .models import BoxBaselinePredictor, pack_baseline, pack_proposed

    if isinstance(est, BoxBaselinePredictor):
        return pack_baseline(samples, est.max_boxes, detector.get("miss_prob", 0.0), detector.get("jitter", 0.0),
                             detector.get("detector_seed", 0))
    return pack_proposed(samples)


def _load_estimator(path):
    from .models import BlockagePredictor, BoxBaselinePredictor

    try:
        _, _, meta = load_checkpoint(path)
    except FileNotFoundError:
        raise CLIError(f"checkpoint {path} does not exist") from None
    kind = meta.get("kind")
    cls = {"proposed": BlockagePredictor, "baseline": BoxBaselinePredictor}.get(kind)
    if cls is None:
        raise CLIError(f"checkpoint {path} holds an unknown model kind {kind!r}")
    return cls.load(path), meta


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args, out: Path) -> tuple[str, int, dict]:
    cfg = _scenario(args, "periodic_occluder")
    p, f = cfg.window.p, cfg.window.f
    if cfg.n_scenes < p + f:
        raise CLIError(f"scenario has {cfg.n_scenes} scenes; at least p + f = {p + f} are required")
    split = generate_dataset(cfg)
    ds_path = out / "dataset.bin"
    save_dataset(split, ds_path)
    scen_path = out / "scenario.yaml"
    scen_path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    print(f"wrote {sum(len(s) for s in split.parts().values())} windows "
          f"({len(split.train)}/{len(split.validation)}/{len(split.test)}) to {ds_path}")
    return cfg.digest(), cfg.seed, {"dataset": str(ds_path), "scenario": str(scen_path)}


def cmd_train(args, out: Path) -> tuple[str, int, dict]:
    from .models import BlockagePredictor, BoxBaselinePredictor, model_preset

    if not args.dataset:
        raise CLIError("train needs --dataset PATH")
    split = load_dataset(args.dataset)
    opts = _read_mapping(args.config, _TRAIN_KEYS)
    seed = args.seed if args.seed is not None else opts.pop("seed", 0)
    opts.pop("seed", None)
    epochs = args.epochs if args.epochs is not None else opts.pop("epochs", 200)
    opts.pop("epochs", None)
    detector = {k: opts.pop(k) for k in ("miss_prob", "jitter", "detector_seed") if k in opts}
    base = model_preset(args.scale)
    if args.model == "proposed":
        opts.pop("max_boxes", None)
        est = BlockagePredictor(scale=args.scale, n_frames=split.p, image_size=base.image_size, n_beams=base.n_beams,
                                n_antennas=opts.pop("n_antennas", base.n_antennas), epochs=epochs, seed=seed, **opts)
        _check_shapes(split, split.p, base.image_size, base.n_beams)
    else:
        for k in ("lr_cnn", "lr_vit"):
            opts.pop(k, None)
        est = BoxBaselinePredictor(scale=args.scale, n_frames=split.p, n_beams=base.n_beams,
                                   n_antennas=opts.pop("n_antennas", base.n_antennas), epochs=epochs, seed=seed,
                                   **opts)
        _check_shapes(split, split.p, None, base.n_beams)
        if any(len(s) and not s.boxes for s in split.parts().values()):
            raise CLIError("the baseline needs ground-truth boxes, but the dataset carries none")
    X_tr, X_va = _features(est, split.train, detector), _features(est, split.validation, detector)

    def report(rec):
        print(f"epoch {rec.epoch:4d}  train {rec.train_loss:.4f}/{rec.train_acc:.3f}  "
              f"val {rec.val_loss:.4f}/{rec.val_acc:.3f}", flush=True)

    est.fit(X_tr, split.train.labels, X_va, split.validation.labels, callback=report)
    meta = {"dataset_digest": _file_digest(args.dataset), "detector": detector, "p": split.p, "f": split.f}
    best, last, hist = out / "model.ckpt", out / "last.ckpt", out / "history.csv"
    est.save(best, state="best", metadata=dict(meta, state="best", best_epoch=est.history_.best_epoch))
    est.save(last, state="final", metadata=dict(meta, state="final"))
    est.history_.write_csv(hist)
    digest = _digest({"estimator": est.get_params(), "detector": detector, "dataset": meta["dataset_digest"]})
    return digest, seed, {"checkpoint": str(best), "last_checkpoint": str(last), "history": str(hist)}


def cmd_eval(args, out: Path) -> tuple[str, int, dict]:
    from .eval import metrics, write_metrics_csv

    if not args.checkpoint or not args.dataset:
        raise CLIError("eval needs --checkpoint PATH and --dataset PATH")
    split = load_dataset(args.dataset)
    est, meta = _load_estimator(args.checkpoint)
    cfg = est.config_
    _check_shapes(split, cfg.n_frames, cfg.image_size if meta["kind"] == "proposed" else None, cfg.n_beams)
    detector = meta.get("detector", {})
    rows = {}
    for name in ([args.split] if args.split != "all" else _SPLITS):
        part = getattr(split, name)
        if not len(part):
            raise CLIError(f"split {name!r} is empty")
        prob = est.predict_proba(_features(est, part, detector))[:, 1]
        rows[name] = metrics(prob, part.labels)
    artifacts = {}
    for name, report in rows.items():
        path = out / f"metrics_{name}.csv"
        write_metrics_csv(report, path)
        artifacts[f"metrics_{name}"] = str(path)
        print(f"{name}: accuracy {report.accuracy:.4f}  precision {report.precision:.4f}  recall {report.recall:.4f}")
    digest = _digest({"checkpoint": _file_digest(args.checkpoint), "dataset": _file_digest(args.dataset)})
    return digest, int(est.seed), artifacts


def cmd_handover(args, out: Path) -> tuple[str, int, dict]:
    from .eval import HandoverConfig, handover_sim
    from .pipeline import simulate

    cfg = _scenario(args, "handover")
    p = cfg.window.p
    if args.predictor in ("none", "oracle"):
        predictor = args.predictor
        ckpt_digest = args.predictor
    else:
        est, meta = _load_estimator(args.predictor)
        if meta["kind"] != "proposed":
            raise CLIError("handover needs a proposed-model checkpoint (camera input); got a baseline")
        mc = est.config_
        if mc.n_beams != cfg.codebook.n_beams or mc.image_size != cfg.camera.height or mc.image_size != cfg.camera.width:
            raise CLIError(f"scenario has N={cfg.codebook.n_beams} beams and {cfg.camera.height}x{cfg.camera.width} "
                           f"images; checkpoint expects N={mc.n_beams} and {mc.image_size}x{mc.image_size}")
        p = mc.n_frames

        def predictor(images, beams):
            from .models import predict_proba
            return predict_proba(est.model_, (images, beams))
        ckpt_digest = _file_digest(args.predictor)
    pairs = cfg.stream_pairs()
    users = {u for u, _ in pairs}
    if len(users) != 1 or len(pairs) < 2:
        raise CLIError(f"handover needs one user seen from two or more base stations; scenario streams are {pairs}")
    records = sorted(simulate(cfg), key=lambda r: r.bs)
    trace = handover_sim(records, predictor, HandoverConfig(p=p, f=cfg.window.f,
                                                            bandwidth_hz=cfg.channel.bandwidth_hz))
    csv_path, svg_path = out / "trace.csv", out / "trace.svg"
    trace.write_csv(csv_path)
    trace.write_svg(svg_path, title=f"Handover trace ({args.predictor if isinstance(predictor, str) else 'model'})")
    outage = int(np.sum(trace.capacity_bps == 0))
    print(f"mean capacity {trace.mean_capacity / 1e9:.3f} Gbps, {int(trace.handovers.sum())} handovers, "
          f"{outage} zero-capacity steps")
    return _digest({"scenario": cfg.digest(), "predictor": ckpt_digest}), cfg.seed, \
        {"trace_csv": str(csv_path), "trace_svg": str(svg_path)}


def cmd_sweep(args, out: Path) -> tuple[str, int, dict]:
    from .eval import proposed_fitter, sweep_pf
    from .pipeline import simulate

    grid = _read_mapping(args.config, _SWEEP_KEYS)
    name = grid.get("scenario", "periodic_occluder")
    cfg = PRESETS[name]() if name in PRESETS and not Path(name).exists() else load_scenario(name)
    if "n_scenes" in grid:
        cfg = dataclasses.replace(cfg, n_scenes=grid["n_scenes"])
    seed = args.seed if args.seed is not None else grid.get("seed", 0)
    epochs = args.epochs if args.epochs is not None else grid.get("epochs", 100)
    p_values = [int(v) for v in grid.get("p", [1, 8])]
    f_values = [int(v) for v in grid.get("f", [3])]
    records = simulate(cfg)
    fit = proposed_fitter(epochs=epochs, seed=seed)
    result = sweep_pf(records, p_values, f_values, fit, ratios=tuple(cfg.split), n_beams=cfg.codebook.n_beams,
                      progress=lambda r: print(f"p={r['p']} f={r['f']}: test {r['test_accuracy']:.4f}  "
                                               f"val {r['val_accuracy']:.4f}", flush=True))
    for note in result.notes:
        print(note)
    path = out / "sweep.csv"
    result.write_csv(path)
    digest = _digest({"scenario": cfg.digest(), "p": p_values, "f": f_values, "epochs": epochs, "seed": seed})
    return digest, seed, {"sweep": str(path)}


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "handover": cmd_handover,
            "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mblab", description="Desk-scale LoS blockage prediction lab.")
    parser.add_argument("--version", action="version", version=_version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_help):
        p.add_argument("--config", help=config_help)
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("generate", help="simulate a scenario and write a windowed dataset")
    common(p, "scenario YAML or preset name (default: periodic_occluder)")

    p = sub.add_parser("train", help="train the proposed model or the box baseline")
    common(p, "YAML of training options (learning rates, batch size, detector noise)")
    p.add_argument("--dataset", help="dataset file from `generate`")
    p.add_argument("--model", choices=("proposed", "baseline"), default="proposed")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    common(p, "unused; accepted for symmetry")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--split", choices=_SPLITS + ("all",), default="test")

    p = sub.add_parser("handover", help="simulate switch-on-predicted-blockage serving")
    common(p, "scenario YAML or preset name (default: handover)")
    p.add_argument("--predictor", default="none", help='"none", "oracle", or a checkpoint path')

    p = sub.add_parser("sweep", help="retrain over a grid of history/horizon lengths")
    common(p, "grid YAML with keys scenario, p, f, epochs, seed, n_scenes")
    p.add_argument("--epochs", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "epochs", None) is not None and args.epochs < 0:
        parser.error("--epochs must be >= 0")
    threads = os.environ.get("MBLAB_THREADS", "1")
    try:
        n_threads = int(threads)
        if n_threads < 1:
            raise ValueError
    except ValueError:
        print(f"mblab: error: MBLAB_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return 2
    out = Path(args.out)
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(n_threads):
            digest, seed, artifacts = COMMANDS[args.command](args, out)
    except (CLIError, ConfigError, DatasetError, CheckpointError, OSError) as exc:
        print(f"mblab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    RunManifest(args.command, digest, int(seed), artifacts, time.perf_counter() - start, _version_string()).write(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
