import json

import numpy as np
import pytest

from selexfit.energy import EnergyMatrix
from selexfit.fit import FitConfig, RoundCounts, multi_start_fit
from selexfit.io import (
    FormatError,
    format_energy_matrix,
    parse_energy_matrix,
    read_config_file,
    read_energy_matrix,
    read_exclusions,
    read_fasta,
    read_fit_result,
    read_peaks,
    read_round_counts,
    write_energy_matrix,
    write_fasta,
    write_fit_result,
    write_manifest,
    write_round_counts,
)


def test_read_table1_row(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("TCCCATTAATCCCACC\t2\t3\n")
    data = read_round_counts(p)
    assert data.rounds == {3: {"GGTGGGATTAATGGGA": 2}}
    assert data.k == 16


def test_read_merges_strands(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("AACG\t2\t1\nCGTT\t5\t1\n")
    assert read_round_counts(p).rounds == {1: {"AACG": 7}}


@pytest.mark.parametrize("text, line", [
    ("ACGT\t0\t1\n", 1), ("ACGT\t1\t1\nACG\t1\t1\n", 2), ("ACGT\t1\n", 1), ("ACXT\t1\t1\n", 1),
    ("ACGT\tx\t1\n", 1),
])
def test_read_round_counts_errors(tmp_path, text, line):
    p = tmp_path / "r.tsv"
    p.write_text(text)
    with pytest.raises(FormatError) as info:
        read_round_counts(p)
    assert info.value.line == line and str(p) in str(info.value)


def test_round_counts_round_trip(tmp_path):
    data = RoundCounts.from_records([("AACG", 2, 1), ("GGGA", 1, 2), ("TTTA", 4, 2)])
    p = tmp_path / "r.tsv"
    write_round_counts(data, p)
    assert read_round_counts(p) == data


def test_bicoid_file(bicoid_path):
    m = read_energy_matrix(bicoid_path)
    assert m.values[0, 0] == -4.722516
    assert m == EnergyMatrix.bicoid()


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = EnergyMatrix(np.round(-rng.random((7, 4)) * 10, 6))
    p = tmp_path / "m.tsv"
    write_energy_matrix(m, p)
    assert read_energy_matrix(p) == m
    assert format_energy_matrix(read_energy_matrix(p)) == p.read_text()


def test_matrix_without_index_column():
    m = parse_energy_matrix("A C G T\n0 -1 -2 -3\n-1 0 -2 -3\n")
    assert m.values.shape == (2, 4)


@pytest.mark.parametrize("text", [
    "A\tC\tG\n1\t0\t-1\t-2\n", "A\tC\tG\tT\n1\t0\t-1\t-2\t-3\n2\t0\t-1\t-2\n", "A\tC\tG\tT\n1\t0\tx\t-2\t-1\n",
    "A\tC\tG\tT\n", "", "A\tC\tG\tT\n0\t-1\t-2\n", "A\tC\tG\tT\n2\t0\t-1\t-2\t-1\n",
])
def test_matrix_errors(text):
    with pytest.raises(FormatError):
        parse_energy_matrix(text)


def test_fasta_round_trip(tmp_path):
    contigs = {"chr1": "ACGTN" * 50, "chr2": "GGGA"}
    p = tmp_path / "g.fa"
    write_fasta(contigs, p, width=60)
    assert read_fasta(p) == contigs


@pytest.mark.parametrize("text", ["ACGT\n", ">a\nACGT\n>a\nAC\n", ">a\nACGR\n", ">\nAC\n"])
def test_fasta_errors(tmp_path, text):
    p = tmp_path / "g.fa"
    p.write_text(text)
    with pytest.raises(FormatError):
        read_fasta(p)


def test_exclusions_and_peaks(tmp_path):
    ex = tmp_path / "ex.tsv"
    ex.write_text("chr1\t10\t20\tcoding\nchr2\t0\t5\n")
    assert read_exclusions(ex) == [("chr1", 10, 20, "coding"), ("chr2", 0, 5, "")]
    ex.write_text("chr1\t20\t10\n")
    with pytest.raises(FormatError):
        read_exclusions(ex)
    pk = tmp_path / "pk.tsv"
    pk.write_text("chr1\t100\t2.5\nchr1\t300\t9.0\n")
    assert read_peaks(pk) == [("chr1", 300, 9.0), ("chr1", 100, 2.5)]


def test_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nseed = 4\nmc-sample-size = 100\n")
    assert read_config_file(p) == {"seed": "4", "mc_sample_size": "100"}
    p.write_text("seed 4\n")
    with pytest.raises(FormatError):
        read_config_file(p)


def test_fit_record_round_trip(tmp_path):
    data = RoundCounts.from_records([("ACG", 5, 1), ("AAA", 2, 1), ("CCA", 1, 1)])
    config = FitConfig(l=2, restarts=2, denominator="exact", seed=3, max_iter=300)
    result = multi_start_fit(data, config)
    p = tmp_path / "fit.txt"
    write_fit_result(result, p)
    back = read_fit_result(p)
    assert back["config"] == config
    assert np.allclose(back["model"].matrix.values, result.matrix.values, atol=5e-7)
    assert back["log_likelihood"] == pytest.approx(result.log_likelihood, abs=1e-6)
    assert "[matrix]" in p.read_text()


def test_manifest(tmp_path):
    inp = tmp_path / "in.txt"
    inp.write_text("x")
    out = tmp_path / "m.json"
    write_manifest(out, "fit", {"a": 1}, {"seed": 2}, [inp], ["o"], 1.23456, "0.1.0")
    doc = json.loads(out.read_text())
    assert doc["seeds"] == {"seed": 2} and len(doc["inputs"][str(inp)]) == 64
    assert doc["wall_clock_seconds"] == 1.235
