"""Command-line entry point: ``d3a <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import TrainConfig, load_config
from .data import (SynthConfig, Transform, generate, load_csv, save_csv, standard_benchmark)
from .errors import D3AError
from .harness import (ablate, ablation_csv, compare_sampling, evaluate, grad_check,
                      sampling_csv, train)
from .model import load_checkpoint

GRAD_TOL = 1e-4


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _config(path) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _load_dir(data_dir) -> tuple[list, object]:
    d = Path(data_dir)
    sources = [load_csv(p) for p in sorted(d.glob("source*.csv"))]
    if not sources:
        raise D3AError(f"no source*.csv files in {d}")
    return sources, load_csv(d / "target.csv")


def _synth_from_args(a) -> SynthConfig:
    cfg = standard_benchmark()
    for name in ("n_classes", "n_sources", "dim", "n_per_class", "radius", "noise"):
        v = getattr(a, name)
        if v is not None:
            setattr(cfg, name, v)
    if a.mode is not None:
        cfg.mode = a.mode
    if a.source_angles is not None:
        cfg.source_transforms = [Transform(angle=float(x)) for x in a.source_angles.split(",")]
    if a.target_angle is not None:
        cfg.target_transform = Transform(angle=a.target_angle)
    if cfg.mode == "segment":
        # keep the segment map consistent with a changed class or source count
        if set(cfg.segments) != set(range(cfg.n_classes)) or \
                max(cfg.segment_source.values()) >= cfg.n_sources:
            cfg.segments = {k: f"S{k * cfg.n_sources // cfg.n_classes}"
                            for k in range(cfg.n_classes)}
            cfg.segment_source = {f"S{i}": i for i in range(cfg.n_sources)}
    if len(cfg.source_transforms) != cfg.n_sources:
        cfg.source_transforms = [Transform(angle=cfg.source_transforms[i % 2].angle)
                                 for i in range(cfg.n_sources)]
    return cfg


def _benchmark():
    bench = standard_benchmark()
    return lambda seed: generate(bench, seed)


def cmd_gen_data(a) -> int:
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    sources, target = generate(_synth_from_args(a), a.seed)
    for i, s in enumerate(sources):
        save_csv(s, out / f"source{i}.csv")
    save_csv(target, out / "target.csv")
    print(f"wrote {len(sources)} sources and target to {out}")
    return 0


def cmd_train(a) -> int:
    cfg = _config(a.config)
    if a.seed is not None:
        cfg = cfg.replace(seed=a.seed)
    if a.data:
        sources, target = _load_dir(a.data)
    else:
        sources, target = generate(standard_benchmark(), cfg.seed)
    report = train(cfg, sources, target)
    report.write(a.out)
    print(f"final target accuracy {report.final_accuracy:.4f} ({report.wall_clock:.1f}s)")
    return 0


def cmd_eval(a) -> int:
    params = load_checkpoint(a.model)
    print(f"accuracy {evaluate(params, load_csv(a.data)):.6f}")
    return 0


def _write_or_print(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_ablate(a) -> int:
    rows = ablate(_config(a.config), _benchmark(), a.seeds)
    _write_or_print(ablation_csv(rows), a.out)
    return 0


def cmd_compare_sampling(a) -> int:
    rows = compare_sampling(_config(a.config), _benchmark(), a.seeds)
    _write_or_print(sampling_csv(rows), a.out)
    return 0


def cmd_grad_check(a) -> int:
    res = grad_check(a.seed, hidden=a.hidden, batch=a.batch)
    ok = res.max_rel_error <= GRAD_TOL
    print(f"seed {res.seed}: max relative error {res.max_rel_error:.3e} over {res.n_checked} "
          f"coordinates ({res.n_excluded} kink-adjacent excluded) -> {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d3a", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic benchmark as CSV files")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-classes", dest="n_classes", type=int)
    g.add_argument("--n-sources", dest="n_sources", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--n-per-class", dest="n_per_class", type=int)
    g.add_argument("--radius", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--mode", choices=("global", "segment"))
    g.add_argument("--source-angles", dest="source_angles",
                   help="comma-separated rotation (degrees) per source")
    g.add_argument("--target-angle", dest="target_angle", type=float)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on a data directory or the standard benchmark")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="directory with source*.csv and target.csv")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a saved model on a labelled CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    for name, fn, helptext in (("ablate", cmd_ablate, "toggle ablation table"),
                               ("compare-sampling", cmd_compare_sampling,
                                "random vs cluster vs boundary sampling")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--seeds", type=_seeds, default=[0])
        s.add_argument("--out", help="also write the CSV here")
        s.set_defaults(func=fn)

    c = sub.add_parser("grad-check", help="analytic vs finite-difference gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--hidden", type=int, default=16)
    c.add_argument("--batch", type=int, default=8)
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (D3AError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
