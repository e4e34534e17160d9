"""Readers and writers for rounds tables, energy matrices, genomes and run records."""

from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .energy import EnergyMatrix
from .seqcore import ALPHABET, Sequence, SequenceError


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""

    def __init__(self, path, line, message):
        loc = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{loc}: {message}")
        self.path = str(path)
        self.line = line


def _lines(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path) as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield n, line


# -- rounds table ------------------------------------------------------------------


def read_round_counts(path):
    """Parse ``sequence<TAB>count<TAB>round`` lines into :class:`RoundCounts`.

    Reverse complements are merged under their canonical type and their
    counts summed. All sequences must share one length.
    """
    from .fit import RoundCounts

    rounds: dict[int, dict[str, int]] = {}
    k = None
    for n, line in _lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(path, n, f"expected 3 tab-separated fields, got {len(fields)}")
        seq_text, count_text, round_text = (f.strip() for f in fields)
        try:
            seq = Sequence(seq_text)
        except SequenceError as exc:
            raise FormatError(path, n, str(exc)) from None
        try:
            count = int(count_text)
            r = int(round_text)
        except ValueError:
            raise FormatError(path, n, "count and round must be integers") from None
        if count < 1:
            raise FormatError(path, n, f"count must be >= 1, got {count}")
        if r < 1:
            raise FormatError(path, n, f"round must be >= 1, got {r}")
        if k is None:
            k = len(seq)
        elif len(seq) != k:
            raise FormatError(path, n, f"sequence length {len(seq)} differs from {k}")
        table = rounds.setdefault(r, {})
        table[seq] = table.get(seq, 0) + count
    if k is None:
        raise FormatError(path, None, "no records")
    return RoundCounts(rounds, k)


def write_round_counts(counts, path):
    with open(path, "w") as fh:
        for s, c, r in counts.records():
            fh.write(f"{s}\t{c}\t{r}\n")


# -- energy matrices ------------------------------------------------------------------


def format_energy_matrix(m: EnergyMatrix, precision: int = 6) -> str:
    if precision < 6:
        raise ValueError("precision must be at least 6 fractional digits")
    rows = ["\t".join(ALPHABET)]
    for i, row in enumerate(m.values, start=1):
        cells = [f"{v + 0.0:.{precision}f}" for v in row]
        rows.append("\t".join([str(i), *cells]))
    return "\n".join(rows) + "\n"


def parse_energy_matrix(text: str, path="<string>") -> EnergyMatrix:
    """Parse the ``A C G T`` header plus one row per position.

    Rows may carry a leading 1-based position index.
    """
    lines = [(n, ln) for n, ln in enumerate(text.splitlines(), start=1)
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError(path, None, "empty matrix file")
    n0, header = lines[0]
    head = header.split()
    if head[-4:] != list(ALPHABET) or len(head) > 5:
        raise FormatError(path, n0, f"header must list columns A C G T, got {header!r}")
    rows = []
    indexed = None
    for n, line in lines[1:]:
        fields = line.split()
        if indexed is None and len(fields) in (4, 5):
            indexed = len(fields) == 5
        if indexed and len(fields) == 5:
            idx, fields = fields[0], fields[1:]
            if idx != str(len(rows) + 1):
                raise FormatError(path, n, f"expected position {len(rows) + 1}, got {idx}")
        elif indexed or len(fields) != 4:
            got = len(fields) - 1 if indexed else len(fields)
            raise FormatError(path, n, f"expected 4 energy columns, got {got}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise FormatError(path, n, "non-numeric cell") from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError(path, n, "non-finite cell")
        rows.append(values)
    if not rows:
        raise FormatError(path, None, "matrix has no rows")
    return EnergyMatrix(np.array(rows))


def read_energy_matrix(path) -> EnergyMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return parse_energy_matrix(path.read_text(), path)


def write_energy_matrix(m: EnergyMatrix, path, precision: int = 6) -> None:
    Path(path).write_text(format_energy_matrix(m, precision))


# -- genome inputs -------------------------------------------------------------------


def read_fasta(path) -> dict[str, str]:
    """Multi-record FASTA as ``{name: upper-case sequence}``; ``N`` is kept."""
    contigs: dict[str, list[str]] = {}
    name = None
    for n, line in _lines(path):
        if line.startswith(">"):
            name = line[1:].split()[0] if line[1:].split() else ""
            if not name:
                raise FormatError(path, n, "empty record name")
            if name in contigs:
                raise FormatError(path, n, f"duplicate record {name!r}")
            contigs[name] = []
        else:
            if name is None:
                raise FormatError(path, n, "sequence before first header")
            chunk = line.strip().upper()
            bad = chunk.strip("ACGTN")
            if bad:
                raise FormatError(path, n, f"unexpected character {bad[0]!r}")
            contigs[name].append(chunk)
    return {k: "".join(v) for k, v in contigs.items()}


def write_fasta(contigs: dict[str, str], path, width: int = 80) -> None:
    with open(path, "w") as fh:
        for name, seq in contigs.items():
            fh.write(f">{name}\n")
            for i in range(0, len(seq), width):
                fh.write(seq[i:i + width] + "\n")


def read_exclusions(path) -> list[tuple[str, int, int, str]]:
    """``contig, start, end, label`` rows; 0-based half-open intervals."""
    out = []
    for n, line in _lines(path):
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise FormatError(path, n, "expected contig, start, end[, label]")
        try:
            start, end = int(fields[1]), int(fields[2])
        except ValueError:
            raise FormatError(path, n, "start and end must be integers") from None
        if start < 0 or end <= start:
            raise FormatError(path, n, f"invalid interval [{start}, {end})")
        out.append((fields[0], start, end, fields[3] if len(fields) == 4 else ""))
    return out


def read_peaks(path) -> list[tuple[str, int, float]]:
    """``contig, position, score`` rows sorted by descending score."""
    out = []
    for n, line in _lines(path):
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(path, n, "expected contig, position, score")
        try:
            out.append((fields[0], int(fields[1]), float(fields[2])))
        except ValueError:
            raise FormatError(path, n, "position must be an integer and score a number") from None
    out.sort(key=lambda p: -p[2])
    return out


def write_peaks(peaks, path) -> None:
    with open(path, "w") as fh:
        for contig, pos, score in peaks:
            fh.write(f"{contig}\t{pos}\t{score:.6f}\n")


def write_profile(profile, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# threshold\t{profile.threshold:.6f}\n")
        fh.write(f"# null_hit_rate\t{profile.null_hit_rate:.6g}\n")
        fh.write("# normalization\tn_peaks * empirical null hit rate\n")
        fh.write("relative_position\tenrichment\n")
        for x, v in zip(profile.positions.tolist(), profile.values.tolist()):
            fh.write(f"{x}\t{v:.6f}\n")


# -- config and run records -------------------------------------------------------------


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; keys use the long flag names with dashes or underscores."""
    out = {}
    for n, line in _lines(path):
        if "=" not in line:
            raise FormatError(path, n, "expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise FormatError(path, n, "empty key")
        out[key] = value.strip()
    return out


def write_fit_result(result, path, extra: dict | None = None) -> None:
    """Plain-text fit record: scalar fields, config echo, then the matrix block."""
    from .fit import FitResult

    assert isinstance(result, FitResult)
    cfg = result.config.to_dict() if result.config is not None else {}
    lines = ["# selexfit fit result"]
    lines.append(f"success = {str(result.success).lower()}")
    lines.append(f"log_likelihood = {result.log_likelihood:.6f}")
    if result.model is not None:
        lines.append("log_tf = " + ", ".join(f"{x:.6f}" for x in result.log_tf))
        lines.append(f"c_junk = {result.c_junk:.6f}")
        lines.append(f"consensus_energy = {result.consensus_energy:.6f}")
    lines.append(f"seed = {cfg.get('seed', '')}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    lines.append("")
    lines.append("[config]")
    for key, value in cfg.items():
        lines.append(f"{key} = {json.dumps(value)}")
    lines.append("")
    lines.append("[restarts]")
    lines.append("index\tfinal_value\titerations\tevaluations\tconverged")
    for t in result.traces:
        lines.append(f"{t.index}\t{t.final_value:.6f}\t{t.iterations}\t{t.evaluations}\t{str(t.converged).lower()}")
    if result.model is not None:
        lines.append("")
        lines.append("[matrix]")
        lines.append(format_energy_matrix(result.matrix).rstrip("\n"))
    Path(path).write_text("\n".join(lines) + "\n")


def read_fit_result(path) -> dict:
    """Parse a fit record back into a dict with ``model`` and ``config`` entries."""
    from .fit import FitConfig
    from .thermo import SelexModel

    text = Path(path).read_text()
    section = None
    scalars: dict[str, str] = {}
    config: dict = {}
    matrix_lines: list[str] = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            continue
        if section is None:
            key, value = (x.strip() for x in line.split("=", 1))
            scalars[key] = value
        elif section == "config":
            key, value = (x.strip() for x in line.split("=", 1))
            config[key] = json.loads(value)
        elif section == "matrix":
            matrix_lines.append(line)
    for key in ("log_tf", "init_energy_range", "init_log_tf_range", "free_cells", "fixed_matrix"):
        if isinstance(config.get(key), list):
            config[key] = _tuplify(config[key])
    out = {"config": FitConfig(**config) if config else None,
           "log_likelihood": float(scalars["log_likelihood"])}
    if matrix_lines:
        matrix = parse_energy_matrix("\n".join(matrix_lines), path)
        log_tf = tuple(float(x) for x in scalars["log_tf"].split(","))
        out["model"] = SelexModel(matrix, log_tf, float(scalars["c_junk"]))
        out["consensus_energy"] = float(scalars.get("consensus_energy", 0.0))
    return out


def _tuplify(x):
    return tuple(_tuplify(v) for v in x) if isinstance(x, list) else x


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, subcommand: str, config: dict, seeds: dict, inputs, outputs,
                   wall_clock: float, version: str) -> dict:
    manifest = {
        "subcommand": subcommand,
        "version": version,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): file_digest(p) for p in inputs if p and os.path.exists(p)},
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": round(wall_clock, 3),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
