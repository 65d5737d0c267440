"""Command-line entry points: gen-data, train, eval, infer, power, ablate, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .audio import atomic_write, parse_levels, read_corpus, read_wav, synth_corpus, write_corpus
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import labels_from_potentials, softmax
from .config import RunConfig, load_config
from .errors import ConfigError, DivergenceError, WavFormatError
from .evaluation import evaluate_model, format_delimited, format_report, group_by_level
from .model import SVAD
from .power import format_power, format_power_delimited, power_from_trace
from .training import train

log = logging.getLogger("svad")

HOP_MS = 15.0
ABLATIONS = (
    ("svad", False, False),
    ("- sConv1D", True, False),
    ("- sConv1D & Attention", True, True),
)


def split_corpus(utts, val_fraction: float):
    """Deterministic tail split; the last ``val_fraction`` of the manifest is held out."""
    n_val = int(round(len(utts) * val_fraction))
    if n_val == 0:
        return list(utts), []
    return list(utts[:-n_val]), list(utts[-n_val:])


def evaluate_corpus(model: SVAD, utts) -> dict:
    counts = evaluate_model(model, utts)
    return group_by_level(counts, [u.snr_db for u in utts])


def _load_config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _train_one(cfg: RunConfig, train_set, val_set, out: Path):
    def on_epoch(entry, result):
        print(entry.line(), flush=True)
        with open(out / "metrics.log", "a") as fh:
            fh.write(entry.line() + "\n")
        save_checkpoint(out / "checkpoint.ckpt", result.model, result.adam, entry.epoch)

    return train(cfg.train_config(), train_set, cfg.arch(), cfg.lif(), val=val_set or None,
                 on_epoch=on_epoch)


def cmd_gen_data(args) -> int:
    levels = parse_levels(args.levels)
    utts = synth_corpus(args.n, levels, args.seed)
    path = write_corpus(args.out, utts)
    print(f"wrote {len(utts)} utterances to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    utts = read_corpus(args.data)
    if args.val:
        train_set, val_set = utts, read_corpus(args.val)
    else:
        train_set, val_set = split_corpus(utts, cfg.val_fraction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.log").unlink(missing_ok=True)
    res = _train_one(cfg, train_set, val_set, out)
    save_checkpoint(out / "model.ckpt", res.model, res.adam, cfg.epochs)
    print(f"saved {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.model)
    report = evaluate_corpus(model, read_corpus(args.data))
    print(format_report(report))
    if args.out:
        atomic_write(args.out, format_delimited(report).encode())
    return 0


def decision_lines(model: SVAD, wave) -> str:
    v = model.potentials(wave)
    p = softmax(v)[:, 1]
    labels = labels_from_potentials(v)
    return "".join(f"{i}, {i * HOP_MS:.1f}, {p[i]:.6f}, {int(labels[i])}\n" for i in range(len(labels)))


def cmd_infer(args) -> int:
    model, _, _ = load_checkpoint(args.model)
    wav = read_wav(args.wav)
    atomic_write(args.out, decision_lines(model, wav.samples).encode())
    return 0


def cmd_power(args) -> int:
    model, _, _ = load_checkpoint(args.model)
    cfg = _load_config(args.config)
    wav = read_wav(args.wav)
    report = power_from_trace(model.profile(wav.samples), cfg.energy_model())
    print(format_power(report))
    if args.out:
        atomic_write(args.out, format_power_delimited(report).encode())
    return 0


def run_ablation(cfg: RunConfig, train_set, test_set, verbose: bool = True) -> dict:
    """Train and evaluate the three ablation rows; returns {row label: level report}."""
    rows = {}
    for label, no_sconv, no_attn in ABLATIONS:
        row_cfg = replace(cfg, no_sconv=no_sconv, no_attention=no_attn)
        if verbose:
            print(f"== {label}", flush=True)
        res = train(row_cfg.train_config(), train_set, row_cfg.arch(), row_cfg.lif(),
                    on_epoch=(lambda e, _: print(e.line(), flush=True)) if verbose else None)
        rows[label] = evaluate_corpus(res.model, test_set)
    return rows


def format_ablation(rows: dict, level: str = "high") -> str:
    lines = [f"{'model':<24}{'MR%':>8}{'FAR%':>8}{'HTER%':>8}   ({level} noise)"]
    for label, report in rows.items():
        r = report.get(level)
        cells = ("n/a",) * 3 if r is None else (r.pct("mr"), r.pct("far"), r.pct("hter"))
        lines.append(f"{label:<24}{cells[0]:>8}{cells[1]:>8}{cells[2]:>8}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    utts = read_corpus(args.data)
    if args.test:
        train_set, test_set = utts, read_corpus(args.test)
    else:
        train_set, test_set = split_corpus(utts, cfg.val_fraction or 0.2)
    rows = run_ablation(cfg, train_set, test_set)
    print(format_ablation(rows, args.level))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_model, run_suite

    results = run_suite(args.n, args.seed)
    worst = max(r.max_rel_error for r in results)
    if not args.skip_model:
        worst = max(worst, check_model(args.seed).max_rel_error)
    print(f"max relative error = {worst:.3e} over {len(results)} stacks"
          f"{'' if args.skip_model else ' + full model'}")
    return 0 if worst < 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svad", description="Spiking voice activity detection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="synthesize a labelled noisy corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--levels", default="low,med,high")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--val", help="separate validation corpus (default: split off val_fraction)")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-level MR / FAR / HTER")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="also write a delimited report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="per-frame decisions for one WAV")
    s.add_argument("--model", required=True)
    s.add_argument("--wav", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("power", help="synaptic-op power estimate for one WAV")
    s.add_argument("--model", required=True)
    s.add_argument("--wav", required=True)
    s.add_argument("--config", help="energy model via e_syn_pj / e_upd_pj")
    s.add_argument("--out", help="also write a delimited report")
    s.set_defaults(func=cmd_power)

    s = sub.add_parser("ablate", help="train and compare the ablation rows")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--test", help="test corpus (default: split off val_fraction)")
    s.add_argument("--level", default="high")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference check of BPTT")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--skip-model", action="store_true")
    s.set_defaults(func=cmd_gradcheck)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"svad: bad config: {e}", file=sys.stderr)
    except (WavFormatError, OSError) as e:
        print(f"svad: bad file: {e}", file=sys.stderr)
    except DivergenceError as e:
        print(f"svad: divergence: {e}", file=sys.stderr)
    except (ValueError, ArithmeticError) as e:
        print(f"svad: error: {e}", file=sys.stderr)
    return 1


def main() -> None:
    sys.exit(run_command())
