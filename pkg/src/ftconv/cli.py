"""Command-line entry point: ``ftconv run|init-model|corpus``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FaultSpecError, IntegrityError, ShapeError, UnsupportedError, WeightFileError
from .faults import read_corpus, write_corpus
from .harness import (
    format_campaign,
    format_plans,
    format_run,
    generate_corpus,
    run_baseline,
    run_campaign,
    run_profile,
    run_protected,
)
from .model import demo_config, load_model, random_weights, save_config, save_weights
from .workflow import load_plans, save_plans

EXIT_OK = 0
EXIT_CAMPAIGN_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTEGRITY = 4

MODES = ("baseline", "protected", "campaign", "profile")


def _write_json(path: str, doc) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_input(args, model) -> np.ndarray:
    if args.input is None:
        return model.make_input(args.seed)
    try:
        x = np.load(args.input, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise WeightFileError(f"cannot read input {args.input}: {e}") from None
    return np.asarray(x, dtype=model.config.np_dtype)


def cmd_run(args) -> int:
    model = load_model(args.config, args.weights)
    plans = load_plans(args.plan) if args.plan and args.mode in ("protected", "campaign") else None

    if args.mode == "profile":
        plans = run_profile(model, reps=args.reps, seed=args.seed, impl=args.impl, tau=args.tau)
        print(format_plans(plans))
        for name, p in plans.items():
            for w in p.sanity_warnings():
                print(f"warning: {name}: {w}", file=sys.stderr)
        if args.plan:
            save_plans(args.plan, plans)
            print(f"plan written to {args.plan}")
        if args.json:
            _write_json(args.json, {"mode": "profile",
                                    "plans": {k: p.to_json() for k, p in plans.items()}})
        return EXIT_OK

    if args.mode == "campaign":
        if not args.corpus:
            raise ConfigError("campaign mode needs --corpus")
        corpus = read_corpus(args.corpus)
        rep = run_campaign(model, corpus, seed=args.seed, plans=plans, impl=args.impl, tau=args.tau)
        print(format_campaign(rep))
        if args.json:
            _write_json(args.json, rep.to_json(args.timings))
        return EXIT_OK if rep.ok else EXIT_CAMPAIGN_FAILED

    D = _load_input(args, model)
    if args.mode == "baseline":
        res = run_baseline(model, D, args.impl)
    else:
        res = run_protected(model, D, plans, args.impl, tau=args.tau)
    print(format_run(res))
    if args.output:
        np.save(args.output, res.output)
    if args.json:
        _write_json(args.json, res.to_json(args.timings))
    return EXIT_OK


def cmd_init_model(args) -> int:
    cfg = demo_config(args.batch, args.dtype)
    save_config(args.config, cfg)
    save_weights(args.weights, random_weights(cfg, args.seed))
    print(f"wrote {args.config} and {args.weights} ({len(cfg.layers)} layers)")
    return EXIT_OK


def cmd_corpus(args) -> int:
    model = load_model(args.config, args.weights)
    entries = generate_corpus(model, args.runs, args.seed)
    write_corpus(args.output, entries)
    print(f"wrote {len(entries)} corpus entries to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ftconv", description="Checksum-protected convolution runner.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a model in one of the modes")
    r.add_argument("--mode", choices=MODES, required=True)
    r.add_argument("--config", required=True, help="model config JSON")
    r.add_argument("--weights", required=True, help="FTCN weight file")
    r.add_argument("--corpus", help="fault corpus (JSONL) for campaign mode")
    r.add_argument("--plan", help="plan file to read (protected/campaign) or write (profile)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--tau", type=float, default=None, help="override the mismatch tolerance")
    r.add_argument("--impl", choices=("direct", "mm"), default="direct")
    r.add_argument("--input", help="input tensor (.npy); seeded uniform [-1, 1] if omitted")
    r.add_argument("--output", help="save the final output tensor (.npy)")
    r.add_argument("--json", help="write the machine-readable report here ('-' for stdout)")
    r.add_argument("--timings", action="store_true", help="include wall times in the JSON report")
    r.add_argument("--reps", type=int, default=5, help="timing repetitions in profile mode")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("init-model", help="write the demo model config and seeded weights")
    i.add_argument("--config", required=True)
    i.add_argument("--weights", required=True)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--batch", type=int, default=2)
    i.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    i.set_defaults(func=cmd_init_model)

    c = sub.add_parser("corpus", help="generate a seeded fault corpus for a model")
    c.add_argument("--config", required=True)
    c.add_argument("--weights", required=True)
    c.add_argument("--runs", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--output", required=True)
    c.set_defaults(func=cmd_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except WeightFileError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShapeError, FaultSpecError, UnsupportedError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
