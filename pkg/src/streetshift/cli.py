"""Command-line entry point: synth, domains, train, translate, analyze.

Exit codes: 0 success, 2 usage/config, 3 domain construction, 4 training,
5 checkpoint.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, dataset, geo, report
from .config import ConfigError, RunConfig, format_kv, parse_kv
from .unit import NonFiniteLossError, UnitConfig, build_model, train, translate
from .unit.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .unit.training import TRACE_FIELDS

log = logging.getLogger("streetshift")

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_TRAIN, EXIT_CHECKPOINT = 0, 2, 3, 4, 5
DIRECTION_LABELS = {"A2B": report.LOW_TO_HIGH, "B2A": report.HIGH_TO_LOW}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument parsing

_DEFAULTS = RunConfig()


def _flag(p: argparse.ArgumentParser, name, help, **kw):
    key = name.lstrip("-").replace("-", "_")
    default = getattr(_DEFAULTS, key)
    p.add_argument(name, dest=key, default=argparse.SUPPRESS, help=f"{help} (default: {default})", **kw)


def _common(p):
    p.add_argument("--config", default=None, help="key-value config file; flags override it (default: None)")
    _flag(p, "--out", "output path", metavar="PATH")
    _flag(p, "--seed", "master random seed", type=int)


def _model_flags(p):
    _flag(p, "--image-size", "image side in pixels", type=int)
    for i, what in enumerate(("adversarial", "KL", "reconstruction", "cycle KL", "cycle reconstruction")):
        _flag(p, f"--lambda{i}", f"weight of the {what} terms", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streetshift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging (default: False)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write two synthetic streetscape domains")
    _common(p)
    _flag(p, "--per-domain", "images per domain", type=int)
    _flag(p, "--image-size", "image side in pixels", type=int)
    _flag(p, "--domain-a-config", "domain A distribution file, or a preset name (green)")
    _flag(p, "--domain-b-config", "domain B distribution file, or a preset name (grey)")

    p = sub.add_parser("domains", help="select best/worst deciles and match images")
    _common(p)
    _flag(p, "--records", "survey records CSV: lat,lon,outcome,value[,group]")
    _flag(p, "--index", "image index CSV: id,lat,lon,heading,path")
    _flag(p, "--fraction", "fraction of records per domain", type=float)
    _flag(p, "--radius-m", "maximum image distance in metres", type=float)

    p = sub.add_parser("train", help="train the translation model")
    _common(p)
    _model_flags(p)
    _flag(p, "--domain-a", "directory of domain A images")
    _flag(p, "--domain-b", "directory of domain B images")
    _flag(p, "--steps", "total training steps", type=int)
    _flag(p, "--checkpoint-every", "save a checkpoint every N steps", type=int)
    _flag(p, "--resume", "continue from OUT/checkpoint.ckpt", action="store_true")
    _flag(p, "--base-width", "first-layer channel count", type=int)
    _flag(p, "--dis-width", "first-layer channel count of the discriminators", type=int)
    _flag(p, "--latent-channels", "latent channel count", type=int)
    _flag(p, "--lr", "Adam learning rate", type=float)
    _flag(p, "--batch-size", "images per domain per step", type=int)

    p = sub.add_parser("translate", help="translate a directory of images")
    _common(p)
    _flag(p, "--checkpoint", "checkpoint file")
    _flag(p, "--input", "directory of source images")
    _flag(p, "--direction", "A2B or B2A")
    _flag(p, "--fuzz", "change threshold for difference images", type=float)
    _flag(p, "--triptych", "also write original | generated | difference strips", action="store_true")

    p = sub.add_parser("analyze", help="metrics, average translation and reports")
    _common(p)
    _flag(p, "--original", "directory of original images")
    _flag(p, "--translated", "directory of translated images")
    _flag(p, "--direction", "A2B (low to high) or B2A (high to low)")
    _flag(p, "--label", "row label in the reports")
    _flag(p, "--fuzz", "change threshold", type=float)
    _flag(p, "--gain", "amplification of average channel changes", type=float)
    _flag(p, "--format", "report format: csv or markdown", choices=("csv", "markdown"))
    p.add_argument("--run", nargs=3, action="append", metavar=("ORIGINAL", "TRANSLATED", "DIRECTION"),
                   default=None, help="extra (original, translated, direction) set; repeatable (default: None)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            values.update(parse_kv(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for k in RunConfig.keys():
        if k in vars(args):
            values[k] = getattr(args, k)
    return RunConfig.from_mapping(values)


# --------------------------------------------------------------------------
# helpers


def _require(cfg, *keys):
    for k in keys:
        if getattr(cfg, k) in (None, ""):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _image_paths(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    man = d / "manifest.csv"
    if man.exists():
        paths = []
        for ref in dataset.read_index(man):
            p = Path(ref.path)
            paths.append(p if p.is_absolute() else d / p)
        return paths
    return sorted(d.glob("*.png"), key=lambda p: p.stem)


def load_images(directory, size=None):
    paths = _image_paths(directory)
    imgs = []
    for p in paths:
        img = dataset.load_png(p)
        if size is not None and img.shape[:2] != (size, size):
            img = dataset.resize_bilinear(img, size)
        imgs.append(img)
    return paths, imgs


def _domain_spec(value, fallback):
    if value is None:
        return fallback
    if value in dataset.PRESETS:
        return dataset.PRESETS[value]
    try:
        return dataset.parse_domain_spec(Path(value).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read domain config {value}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{value}: {exc}") from None


def write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in TRACE_FIELDS[1:]])


def read_trace(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig) -> int:
    _require(cfg, "out")
    out = Path(cfg.out)
    spec_a = _domain_spec(cfg.domain_a_config, dataset.GREEN)
    spec_b = _domain_spec(cfg.domain_b_config, dataset.GREY)
    try:
        for tag, spec, offset in (("A", spec_a, 0), ("B", spec_b, 1)):
            d = out / tag
            d.mkdir(parents=True, exist_ok=True)
            seed = dataset.derive_seed(cfg.seed, offset)
            imgs = dataset.synth_domain(cfg.per_domain, spec, seed=seed, size=cfg.image_size)
            refs = []
            for i, img in enumerate(imgs):
                rid = f"{tag.lower()}_{i:05d}"
                dataset.save_png(d / f"{rid}.png", img)
                refs.append(dataset.ImageRef(rid, path=f"{rid}.png"))
            dataset.write_index(d / "manifest.csv", refs)
            (d / "domain.cfg").write_text(dataset.format_domain_spec(spec) + f"# derived seed {seed}\n")
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from None
    print(f"wrote {cfg.per_domain} images each to {out / 'A'} and {out / 'B'}")
    return EXIT_OK


def cmd_domains(cfg: RunConfig) -> int:
    _require(cfg, "records", "index", "out")
    try:
        with open(cfg.records, newline="") as fh:
            records, errors = geo.load_records(fh)
        index = dataset.read_index(cfg.index)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    for e in errors:
        print(f"warning: {cfg.records}: {e}", file=sys.stderr)
    if not records:
        raise geo.DomainError("no valid records")
    records = geo.aggregate_by_group(records)
    pair = geo.build_domain_pair(records, index, cfg.fraction, cfg.radius_m)
    pair.write(cfg.out)
    k = int(cfg.fraction * len(records))
    print(f"selected {k} best and {k} worst of {len(records)} locations; "
          f"matched {len(pair.best)} best / {len(pair.worst)} worst images; "
          f"excluded {pair.excluded_best} best / {pair.excluded_worst} worst locations; "
          f"{pair.ambiguous} ambiguous images dropped")
    if not pair.best and not pair.worst:
        print(f"warning: no image within {cfg.radius_m} m of any selected location; manifest is empty",
              file=sys.stderr)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "domain_a", "domain_b", "out")
    out = Path(cfg.out)
    ckpt_path = out / "checkpoint.ckpt"
    trace_path = out / "trace.csv"
    _, a = load_images(cfg.domain_a, cfg.image_size)
    _, b = load_images(cfg.domain_b, cfg.image_size)
    if not a or not b:
        raise UsageError("both domain directories must contain images")
    a, b = np.stack(a), np.stack(b)
    trace = []
    if cfg.resume and ckpt_path.exists():
        model = load_checkpoint(ckpt_path)
        if model.config.image_size != cfg.image_size:
            raise CheckpointError(f"checkpoint image size {model.config.image_size} != {cfg.image_size}")
        done = model.train_state.step if model.train_state else 0
        if trace_path.exists():
            trace = [r for r in read_trace(trace_path) if r["step"] <= done]
    else:
        model = build_model(UnitConfig(
            image_size=cfg.image_size, base_width=cfg.base_width, dis_width=cfg.dis_width,
            latent_channels=cfg.latent_channels, lambdas=cfg.lambdas, seed=cfg.seed, lr=cfg.lr,
            batch_size=cfg.batch_size,
        ))
        done = 0
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_kv({k: getattr(cfg, k) for k in RunConfig.keys()}))

    # train in checkpoint-sized chunks; state carries over between calls
    while done < cfg.steps:
        chunk = min(cfg.checkpoint_every - done % cfg.checkpoint_every, cfg.steps - done)
        trace += train(model, a, b, chunk, seed=cfg.seed)
        done = model.train_state.step
        save_checkpoint(model, ckpt_path)
        write_trace(trace_path, trace)
    print(f"trained to step {done}; checkpoint {ckpt_path}")
    return EXIT_OK


def cmd_translate(cfg: RunConfig) -> int:
    _require(cfg, "checkpoint", "input", "out")
    model = load_checkpoint(cfg.checkpoint)
    paths, imgs = load_images(cfg.input, model.image_size)
    if not imgs:
        raise UsageError(f"no images in {cfg.input}")
    outs = translate(model, np.stack(imgs), cfg.direction.upper())
    out = Path(cfg.out)
    for p, src, dst in zip(paths, imgs, outs):
        dataset.save_png(out / "translated" / f"{p.stem}.png", dst)
        diff = analysis.diff_image(src, dst, cfg.fuzz)
        dataset.save_png(out / "diff" / f"{p.stem}.png", diff.masked())
        if cfg.triptych:
            strip = np.concatenate([src, dst, diff.masked()], axis=1)
            dataset.save_png(out / "triptych" / f"{p.stem}.png", strip)
    print(f"translated {len(outs)} images {cfg.direction.upper()} into {out}")
    return EXIT_OK


def _pairs(orig_dir, trans_dir):
    o_paths = {p.stem: p for p in _image_paths(orig_dir)}
    t_paths = {p.stem: p for p in _image_paths(trans_dir)}
    common = sorted(set(o_paths) & set(t_paths))
    return [(dataset.load_png(o_paths[k]), dataset.load_png(t_paths[k])) for k in common]


def cmd_analyze(cfg: RunConfig, runs=None) -> int:
    _require(cfg, "out")
    sets = []
    if cfg.original and cfg.translated:
        sets.append((cfg.original, cfg.translated, cfg.direction))
    sets += [tuple(r) for r in runs or ()]
    if not sets:
        raise UsageError("give --original/--translated or at least one --run")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    metric_rows, colour_rows = [], []
    for orig_dir, trans_dir, direction in sets:
        pairs = _pairs(orig_dir, trans_dir)
        if not pairs:
            raise UsageError(f"no matching image pairs between {orig_dir} and {trans_dir}")
        dlabel = DIRECTION_LABELS.get(direction.upper(), direction)
        metric_rows.append(analysis.batch_metrics(pairs, cfg.fuzz, cfg.label, dlabel))
        stats, fo, ft = analysis.average_translation([p[0] for p in pairs], [p[1] for p in pairs],
                                                     f"{cfg.label} - {dlabel}" if cfg.label else dlabel)
        colour_rows.append(stats)
        tag = direction.upper().replace(" ", "_")
        dataset.save_png(out / f"average_original_{tag}.png", dataset.to_uint8(fo))
        dataset.save_png(out / f"average_translated_{tag}.png", dataset.to_uint8(ft))
        for ch, plane in zip("rgb", analysis.amplified_change_image(fo, ft, cfg.gain)):
            dataset.save_gray_png(out / f"amplified_{tag}_{ch}.png", plane)
    (out / "metrics.csv").write_text(report.metric_dump(metric_rows + colour_rows))
    ext = "csv" if cfg.format == "csv" else "md"
    tables = {
        "change": report.render_report(metric_rows, cfg.format, "change"),
        "similarity": report.render_report(metric_rows, cfg.format, "similarity"),
        "colour": report.render_report(colour_rows, cfg.format, "colour"),
    }
    for name, text in tables.items():
        (out / f"{name}.{ext}").write_text(text)
    print("\n".join(tables.values()))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "domains": cmd_domains, "train": cmd_train, "translate": cmd_translate,
            "analyze": cmd_analyze}


def _limit_threads():
    n = os.environ.get("STREETSHIFT_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        cfg = resolve_config(args)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.run)
        return COMMANDS[args.command](cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except geo.DomainError as exc:
        print(f"error: domain construction failed: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NonFiniteLossError as exc:
        print(f"error: training aborted: {exc} (term: {exc.term})", file=sys.stderr)
        return EXIT_TRAIN
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
