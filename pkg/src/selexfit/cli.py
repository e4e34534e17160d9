"""Command-line entry point: ``selexfit <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
named after the long flags; flags given on the command line win. Each run
writes a JSON manifest next to its main output.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .chipeval import ChipConfig, Genome, enrichment_profile, position_scores
from .energy import best_site, canonical_consensus
from .fit import FitConfig, multi_start_fit
from .io import (
    read_config_file,
    read_energy_matrix,
    read_exclusions,
    read_fasta,
    read_peaks,
    read_round_counts,
    write_energy_matrix,
    write_fit_result,
    write_manifest,
    write_profile,
    write_round_counts,
)
from .seqcore import (
    Sequence,
    brute_force_class_count,
    count_distinct_types,
    count_revcomp_classes,
)
from .simulate import SimConfig, simulate_selex
from .thermo import SelexModel, exact_log_denominators
from .validation import check_seed

log = logging.getLogger("selexfit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p, seeded: bool):
    p.add_argument("--config", help="key = value file mirroring the long flags")
    p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    p.add_argument("-v", "--verbose", action="store_true")
    if seeded:
        p.add_argument("--seed", type=int, help="random seed (required)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selexfit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"selexfit {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit an energy matrix to a rounds table")
    _add_common(p, seeded=True)
    p.add_argument("--rounds", help="tab-separated sequence, count, round file")
    p.add_argument("--output", help="fit record path; the matrix goes to <output>.matrix.tsv")
    p.add_argument("--l", type=int, default=10, help="site length")
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--log-tf", type=_floats, help="hold per-round log concentrations fixed")
    p.add_argument("--fit-junk", action="store_true")
    p.add_argument("--c-junk", type=float, default=0.0)
    p.add_argument("--ftol", type=float, default=1e-8)
    p.add_argument("--xtol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=50_000)
    p.add_argument("--polish-rounds", type=int, default=0)
    p.add_argument("--polish-iter", type=int, default=20_000)
    p.add_argument("--mc-sample-size", type=int, default=100_000)
    p.add_argument("--denominator", choices=("mc", "exact"), default="mc")
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_fit, required=("rounds", "output"))

    p = sub.add_parser("simulate", help="simulate SELEX rounds from a truth model")
    _add_common(p, seeded=True)
    p.add_argument("--matrix", help="energy matrix file")
    p.add_argument("--log-tf", type=_floats, help="one log concentration per round")
    p.add_argument("--c-junk", type=float, default=0.0)
    p.add_argument("--pool-size", type=int, default=1_000_000)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--sample-per-round", type=int, default=2000)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--output", help="rounds table to write")
    p.set_defaults(func=cmd_simulate, required=("matrix", "log_tf", "output"))

    p = sub.add_parser("score", help="best-site energies of sequences")
    _add_common(p, seeded=False)
    p.add_argument("--matrix")
    p.add_argument("--sequences", help="file with one sequence per line")
    p.add_argument("sequence", nargs="*", help="sequences given inline")
    p.add_argument("--output", help="output table (default: stdout)")
    p.set_defaults(func=cmd_score, required=("matrix",))

    p = sub.add_parser("scan", help="per-position double-strand scores over a FASTA file")
    _add_common(p, seeded=False)
    p.add_argument("--matrix")
    p.add_argument("--fasta")
    p.add_argument("--threshold", type=float, help="also report hits strictly above this score")
    p.add_argument("--output")
    p.set_defaults(func=cmd_scan, required=("matrix", "fasta", "output"))

    p = sub.add_parser("chip-eval", help="peak-centered enrichment profile")
    _add_common(p, seeded=True)
    p.add_argument("--matrix")
    p.add_argument("--fasta")
    p.add_argument("--peaks", help="contig, position, score table")
    p.add_argument("--exclusions", help="contig, start, end[, label] table")
    p.add_argument("--n-peaks", type=int, default=100)
    p.add_argument("--half-window", type=int, default=4000)
    p.add_argument("--n-samples", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.999)
    p.add_argument("--smoothing", type=int, default=201)
    p.add_argument("--output")
    p.set_defaults(func=cmd_chip_eval, required=("matrix", "fasta", "peaks", "output"))

    p = sub.add_parser("oracle", help="exact small-k counts and normalizing sums")
    _add_common(p, seeded=False)
    p.add_argument("--k", type=int)
    p.add_argument("--matrix", help="with --log-tf, also print exact normalizing sums")
    p.add_argument("--log-tf", type=_floats)
    p.add_argument("--c-junk", type=float, default=0.0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_oracle, required=("k", "output"))
    return parser


def _apply_config(sub: argparse.ArgumentParser, path: str) -> None:
    values = read_config_file(path)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help", "func", "required"):
            raise UsageError(f"{path}: unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{path}: {key} must be true or false")
            defaults[key] = value.lower() in ("true", "1", "yes")
        elif action.nargs == "*":
            defaults[key] = value.split()
        else:
            defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    argv = list(argv)
    pre = parser.parse_known_args(argv)[0] if argv else None
    if pre is not None and getattr(pre, "config", None):
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        _apply_config(subparsers.choices[pre.command], pre.config)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing subcommand (fit, simulate, score, scan, chip-eval, oracle)")
    missing = [name for name in args.required if getattr(args, name) in (None, ())]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise UsageError(f"{args.command}: missing required {flags}")
    if hasattr(args, "seed"):
        try:
            check_seed(args.seed)
        except ValueError:
            raise UsageError(f"{args.command}: an explicit --seed is required") from None
    return args


def _require_file(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _echo(args) -> dict:
    out = {}
    for key, value in vars(args).items():
        if key in ("func", "required", "verbose"):
            continue
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


# -- subcommands --------------------------------------------------------------------


def cmd_fit(args):
    data = read_round_counts(_require_file(args.rounds))
    fixed = args.log_tf is not None
    config = FitConfig(
        l=args.l, restarts=args.restarts, fit_log_tf=not fixed, log_tf=args.log_tf,
        fit_junk=args.fit_junk, c_junk=args.c_junk, ftol=args.ftol, xtol=args.xtol,
        max_iter=args.max_iter, polish_rounds=args.polish_rounds, polish_iter=args.polish_iter,
        mc_sample_size=args.mc_sample_size, denominator=args.denominator, seed=args.seed,
        n_jobs=args.n_jobs,
    )
    result = multi_start_fit(data, config)
    if not result.success:
        raise RuntimeError("every restart diverged")
    matrix_path = f"{args.output}.matrix.tsv"
    write_fit_result(result, args.output, extra={"consensus": canonical_consensus(result.matrix)})
    write_energy_matrix(result.matrix, matrix_path)
    log.info("log-likelihood %.6f, consensus %s", result.log_likelihood,
             canonical_consensus(result.matrix))
    return [args.rounds], [args.output, matrix_path]


def cmd_simulate(args):
    matrix = read_energy_matrix(_require_file(args.matrix))
    model = SelexModel(matrix, args.log_tf, args.c_junk)
    config = SimConfig(model, pool_size=args.pool_size, k=args.k,
                       sample_per_round=args.sample_per_round, seed=args.seed, n_jobs=args.n_jobs)
    counts = simulate_selex(config)
    write_round_counts(counts, args.output)
    return [args.matrix], [args.output]


def cmd_score(args):
    matrix = read_energy_matrix(_require_file(args.matrix))
    seqs = list(args.sequence)
    inputs = [args.matrix]
    if args.sequences:
        inputs.append(_require_file(args.sequences))
        seqs += [ln.strip() for ln in Path(args.sequences).read_text().splitlines()
                 if ln.strip() and not ln.startswith("#")]
    if not seqs:
        raise UsageError("score: no sequences given")
    lines = ["sequence\tenergy\toffset\tstrand"]
    for s in seqs:
        site = best_site(matrix, Sequence(s))
        lines.append(f"{s.upper()}\t{site.energy + 0.0:.6f}\t{site.offset}\t{site.strand}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        return inputs, [args.output]
    sys.stdout.write(text)
    return inputs, []


def cmd_scan(args):
    matrix = read_energy_matrix(_require_file(args.matrix))
    contigs = read_fasta(_require_file(args.fasta))
    genome = Genome(contigs)
    with open(args.output, "w") as fh:
        header = ["contig", "position", "score"] + (["hit"] if args.threshold is not None else [])
        fh.write("\t".join(header) + "\n")
        for name, codes in genome.contigs.items():
            if codes.size < matrix.l:
                continue
            scores = position_scores(matrix, codes)
            for i, v in enumerate(scores.tolist()):
                row = f"{name}\t{i}\t{v:.6f}" if np.isfinite(v) else f"{name}\t{i}\tNA"
                if args.threshold is not None:
                    row += f"\t{int(v > args.threshold)}"
                fh.write(row + "\n")
    return [args.matrix, args.fasta], [args.output]


def cmd_chip_eval(args):
    matrix = read_energy_matrix(_require_file(args.matrix))
    contigs = read_fasta(_require_file(args.fasta))
    excluded = read_exclusions(_require_file(args.exclusions)) if args.exclusions else []
    peaks = read_peaks(_require_file(args.peaks))
    config = ChipConfig(n_peaks=args.n_peaks, half_window=args.half_window,
                        n_samples=args.n_samples, alpha=args.alpha, smoothing=args.smoothing,
                        seed=args.seed)
    profile = enrichment_profile(Genome(contigs, excluded), peaks, matrix, config)
    write_profile(profile, args.output)
    return [args.matrix, args.fasta, args.peaks, args.exclusions], [args.output]


def cmd_oracle(args):
    k = args.k
    lines = [f"k\t{k}", f"distinct_types_formula\t{count_distinct_types(k)}",
             f"revcomp_classes\t{count_revcomp_classes(k)}"]
    if 4 ** k <= 10 ** 7:
        lines.append(f"revcomp_classes_brute_force\t{brute_force_class_count(k)}")
    inputs = []
    if args.matrix:
        if args.log_tf is None:
            raise UsageError("oracle: --matrix needs --log-tf")
        inputs.append(_require_file(args.matrix))
        model = SelexModel(read_energy_matrix(args.matrix), args.log_tf, args.c_junk)
        for r, v in enumerate(exact_log_denominators(model, k), start=1):
            lines.append(f"log_denominator_round_{r}\t{v:.6f}")
    Path(args.output).write_text("\n".join(lines) + "\n")
    return inputs, [args.output]


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    start = time.perf_counter()
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        inputs, outputs = args.func(args)
        if args.config:
            inputs = [args.config, *inputs]
        primary = outputs[0] if outputs else f"selexfit-{args.command}"
        manifest = args.manifest or f"{primary}.manifest.json"
        seeds = {"seed": args.seed} if hasattr(args, "seed") else {}
        write_manifest(manifest, args.command, _echo(args), seeds, inputs, outputs,
                       time.perf_counter() - start, __version__)
    except UsageError as exc:
        print(f"selexfit: usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"selexfit: missing input: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"selexfit: invalid input: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - last-resort one-line diagnostic
        print(f"selexfit: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
