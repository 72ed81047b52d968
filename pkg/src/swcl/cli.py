"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 validation failure (including a
missing upstream artifact), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

from threadpoolctl import threadpool_limits

from .augment import AugmentConfig
from .contrastive.encoder import EncoderConfig, EncoderNet
from .contrastive.loss import LABEL_FIELDS, LossConfig
from .contrastive.pretrain import PretrainConfig, loss_csv, pretrain
from .evaluation.ablation import ALL_SCHEMES, ablate_label_schemes, ablate_thresholds
from .evaluation.probe import patient_split, probe_encoder, probe_patches
from .labeler.cam import extract_cams
from .labeler.losses import FORMULATIONS, S4LConfig
from .labeler.net import LabelerNet
from .labeler.train import train_labeler
from .nets import TrunkConfig
from .numerics.io import (
    FormatError,
    atomic_write_text,
    dumps_jsonl,
    load_checkpoint,
    read_jsonl,
    read_tensor,
    save_checkpoint,
    write_sidecar,
    write_tensor,
)
from .numerics.ops import DegenerateInputError, NonFiniteError
from .patchgen import (
    DEFAULT_THRESHOLD,
    build_dataset,
    histogram_csv,
    read_patches,
    relabel,
    write_patches,
)
from .synth import SynthConfig, generate_dataset, read_dataset, stream, write_dataset
from .verify import run_checks

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
LOCK_NAME = ".swcl.lock"
PROBE_SEED_OFFSET = 1_000_003


class UsageError(Exception):
    pass


class MissingArtifact(FileNotFoundError):
    pass


class WorkdirLocked(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _path(args, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing upstream artifact: {path}")
    return path


def _effective(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "workdir", "threads")}


@contextmanager
def _workdir_lock(workdir: Path):
    workdir.mkdir(parents=True, exist_ok=True)
    lock = workdir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise WorkdirLocked(f"workdir {workdir} is locked by another invocation ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _csv_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _labels(text: str) -> tuple[str, ...]:
    labels = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in labels if v not in LABEL_FIELDS]
    if bad or not labels:
        raise ValueError(f"--labels must be a non-empty subset of {','.join(LABEL_FIELDS)}, got {text!r}")
    return labels


def _pretrain_config(args) -> PretrainConfig:
    return PretrainConfig(
        encoder=EncoderConfig(proj_dim=args.proj_dim),
        loss=LossConfig(tau=args.tau, label_set=_labels(args.labels)),
        augment=AugmentConfig(hflip_p=0.5 if args.hflip else 0.0),
        batch_size=args.batch,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
    )


def _load_encoder(path: Path) -> EncoderNet:
    params = load_checkpoint(_require(path))
    return EncoderNet(params, EncoderConfig(proj_dim=params["proj2.weight"].shape[0]))


def _probe_data(args):
    cfg = SynthConfig(n_patients_labeled=args.probe_patients, n_patients_unlabeled=0,
                      image_size=args.size, seed=args.seed + PROBE_SEED_OFFSET, prefix="q")
    patches = probe_patches(generate_dataset(cfg), int(round(args.patch_frac * args.size)))
    return patches, patient_split(patches.patient_ids, 0.3, args.seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    n_lab = args.labeled if args.labeled is not None else args.patients // 2
    n_unl = args.unlabeled if args.unlabeled is not None else args.patients - n_lab
    cfg = SynthConfig(n_patients_labeled=n_lab, n_patients_unlabeled=n_unl, image_size=args.size,
                      lesion_rate=args.lesion_rate, lesion_contrast=args.lesion_contrast,
                      jitter=args.jitter, seed=args.seed)
    out = _path(args, args.out)
    records = generate_dataset(cfg)
    write_dataset(records, out, cfg)
    write_sidecar(out / "manifest.jsonl", seed=args.seed, config=_effective(args), stage="synth")
    print(f"wrote {len(records)} images to {out}")
    return EXIT_OK


def cmd_train_labeler(args) -> int:
    data = _require(_path(args, args.data))
    records = read_dataset(_require(data / "manifest.jsonl").parent)
    cfg = S4LConfig(w=args.w, margin=args.margin, views_per_image=args.views,
                    triplet_formulation=args.triplet_formulation, lr=args.lr,
                    batch_labeled=args.batch, batch_unlabeled=args.batch, epochs=args.epochs, seed=args.seed)
    res = train_labeler([r for r in records if r.split == "labeled"],
                        [r for r in records if r.split == "unlabeled"], cfg)
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, res.net.params)
    write_sidecar(out, seed=args.seed, config=_effective(args), stage="train-labeler")
    metrics = {"holdout_auc": res.holdout_auc, "holdout_ids": res.holdout_ids, "history": res.history}
    atomic_write_text(out.with_suffix(".metrics.json"), json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    print(f"hold-out AUC {res.holdout_auc:.4f}; checkpoint {out}")
    return EXIT_OK


def cmd_extract_cams(args) -> int:
    data = _require(_path(args, args.data))
    records = read_dataset(_require(data / "manifest.jsonl").parent)
    net = LabelerNet(load_checkpoint(_require(_path(args, args.checkpoint))), TrunkConfig())
    cams = extract_cams(net, records)
    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for image_id in sorted(cams):
        write_tensor(out / f"{image_id}.cam", cams[image_id])
        rows.append({"image_id": image_id, "cam_path": f"{image_id}.cam"})
    atomic_write_text(out / "index.jsonl", dumps_jsonl(rows))
    write_sidecar(out / "index.jsonl", seed=args.seed, config=_effective(args), stage="extract-cams")
    print(f"wrote {len(rows)} CAMs to {out}")
    return EXIT_OK


def cmd_gen_patches(args) -> int:
    data = _require(_path(args, args.data))
    records = read_dataset(_require(data / "manifest.jsonl").parent)
    cam_dir = _require(_path(args, args.cams))
    cams = {row["image_id"]: read_tensor(cam_dir / row["cam_path"])
            for row in read_jsonl(_require(cam_dir / "index.jsonl"))}
    size = records[0].pixels.shape[-1] if records else 0
    manifest = build_dataset(records, cams, args.threshold, int(round(args.patch_frac * size)))
    out = _path(args, args.out)
    write_patches(manifest, out)
    write_sidecar(out / "manifest.jsonl", seed=args.seed, config=_effective(args), stage="gen-patches")
    if args.emit_histogram:
        sys.stdout.write(histogram_csv(manifest.histogram))
    n_ab = sum(r.is_abnormal for r in manifest.records)
    print(f"wrote {len(manifest)} patches ({n_ab} abnormal at t={args.threshold}) to {out}")
    return EXIT_OK


def _read_manifest(args):
    pdir = _require(_path(args, args.patches))
    _require(pdir / "manifest.jsonl")
    manifest = read_patches(pdir)
    if args.threshold is not None:
        manifest = relabel(manifest, args.threshold)
    return manifest


def cmd_pretrain(args) -> int:
    manifest = _read_manifest(args)
    result = pretrain(manifest.records, _pretrain_config(args))
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.net.params)
    write_sidecar(out, seed=args.seed, config=_effective(args), stage="pretrain")
    log_path = out.with_suffix(".loss.csv")
    atomic_write_text(log_path, loss_csv(result.losses))
    write_sidecar(log_path, seed=args.seed, config=_effective(args), stage="pretrain")
    print(f"final loss {result.losses[-1]:.4f}; checkpoint {out}" if result.losses else f"checkpoint {out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    if args.random_init:
        encoder = EncoderNet.init(EncoderConfig(), stream(args.seed, "encoder-init"))
    elif args.checkpoint:
        encoder = _load_encoder(_path(args, args.checkpoint))
    else:
        raise UsageError("probe needs --checkpoint or --random-init")
    results = probe_encoder(encoder, *_probe_data(args))
    payload = {k: asdict(v) for k, v in results.items()}
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    write_sidecar(out, seed=args.seed, config=_effective(args), stage="probe")
    for r in results.values():
        print(f"{r.target} {r.metric} {r.value:.4f} (n={r.n_eval})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    manifest = _read_manifest(args)
    config = _pretrain_config(args)
    probe, mask = _probe_data(args)
    seeds = list(range(args.seed, args.seed + args.seeds))
    if args.mode == "threshold":
        grid = ablate_thresholds(manifest, _csv_floats(args.thresholds), config, probe, mask, seeds)
    else:
        grid = ablate_label_schemes(manifest, ALL_SCHEMES, config, probe, mask, seeds)
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, grid.to_csv())
    write_sidecar(out, seed=args.seed, config=_effective(args), stage="ablate")
    sys.stdout.write(grid.to_csv())
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks(Path(args.workdir))
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail}")
    if all(r.ok for r in results):
        print(f"all {len(results)} invariants passed")
        return EXIT_OK
    return EXIT_NUMERICAL if any(r.numerical for r in results if not r.ok) else EXIT_VALIDATION


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _pretrain_flags(p):
    p.add_argument("--patches", default="patches", help="patch dataset directory")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--labels", default=",".join(LABEL_FIELDS), help="comma-separated label set")
    p.add_argument("--batch", type=int, default=64, help="source patches per minibatch (N)")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--proj-dim", type=int, default=16)
    p.add_argument("--threshold", type=float, default=None, help="relabel patches at this threshold")
    p.add_argument("--hflip", action="store_true", help="enable random horizontal flips")


def _probe_flags(p):
    p.add_argument("--probe-patients", type=int, default=60)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--patch-frac", type=float, default=0.5)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--workdir", default=".", help="directory owning all relative paths")
    common.add_argument("--config", default=None, help="JSON file of flag defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="cap on numerical worker threads")

    parser = _Parser(prog="swcl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("synth", cmd_synth, "generate a synthetic fundus dataset")
    p.add_argument("--patients", type=int, default=200, help="total patients, split evenly when not given")
    p.add_argument("--labeled", type=int, default=None)
    p.add_argument("--unlabeled", type=int, default=None)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--lesion-rate", type=float, default=0.5)
    p.add_argument("--lesion-contrast", type=float, default=SynthConfig.lesion_contrast)
    p.add_argument("--jitter", action="store_true", help="shift right-eye templates by up to 2 pixels")
    p.add_argument("--out", default="data")

    p = add("train-labeler", cmd_train_labeler, "train the pseudo-labeler")
    p.add_argument("--data", default="data")
    p.add_argument("--out", default="labeler.ckpt")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--lr", type=float, default=S4LConfig.lr)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--triplet-formulation", choices=FORMULATIONS, default="softplus-margin")

    p = add("extract-cams", cmd_extract_cams, "write normalized abnormal-class CAMs")
    p.add_argument("--data", default="data")
    p.add_argument("--checkpoint", default="labeler.ckpt")
    p.add_argument("--out", default="cams")

    p = add("gen-patches", cmd_gen_patches, "build the semi-weakly annotated patch dataset")
    p.add_argument("--data", default="data")
    p.add_argument("--cams", default="cams")
    p.add_argument("--out", default="patches")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--patch-frac", type=float, default=0.5)
    p.add_argument("--emit-histogram", action="store_true", help="print the score histogram CSV")

    p = add("pretrain", cmd_pretrain, "contrastive pretraining on patches")
    _pretrain_flags(p)
    p.add_argument("--out", default="encoder.ckpt")

    p = add("probe", cmd_probe, "linear probes on a frozen encoder")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--random-init", action="store_true")
    _probe_flags(p)
    p.add_argument("--out", default="probe.json")

    p = add("ablate", cmd_ablate, "threshold or label-scheme sweep")
    p.add_argument("--mode", choices=("threshold", "labels"), required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--thresholds", default="0.3,0.4,0.5")
    _pretrain_flags(p)
    _probe_flags(p)
    p.add_argument("--out", default="ablation.csv")

    add("verify", cmd_verify, "run the invariant suite")
    return parser, subs


def parse(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        path = _require(_path(args, args.config))
        values = json.loads(path.read_text(encoding="utf-8"))
        known = {a.dest for a in subs[args.command]._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown keys in {path}: {', '.join(unknown)}")
        subs[args.command].set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
        workdir = Path(args.workdir)
        with _workdir_lock(workdir), threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, DegenerateInputError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MissingArtifact, WorkdirLocked, FormatError, ValueError, KeyError, OSError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
