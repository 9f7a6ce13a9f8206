import csv
import math
import subprocess
import sys

import pytest

from compsep.cli import ConfigError, load_config, main, parse_config

QUAD = """\
problem:
  kind: quadratic
  d: 10
  m_f: 4
  m_g: 4
  ratio: 2.0
  mu: 0.1
algorithms:
{algos}
eps: 1.0e-6
max_rounds: 50000
seeds: {seeds}
output: {out}
"""


def write_cfg(tmp_path, algos="  - c_aeg", seeds="[0]", name="cfg.yaml", out="out"):
    path = tmp_path / name
    path.write_text(QUAD.format(algos=algos, seeds=seeds, out=tmp_path / out))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_empty_algorithms_is_invalid(tmp_path, capsys):
    path = write_cfg(tmp_path, algos="  []").read_text().replace("algorithms:\n  []", "algorithms: []")
    (tmp_path / "e.yaml").write_text(path)
    assert main(["run", str(tmp_path / "e.yaml")]) == 1
    assert "e.yaml:8" in capsys.readouterr().err


def test_single_run_trace(tmp_path):
    assert main(["run", str(write_cfg(tmp_path))]) == 0
    rows = read_csv(tmp_path / "out" / "c_aeg_seed0.csv")
    assert list(rows[0]) == ["outer_index", "rounds_f", "rounds_g", "comms_f", "comms_g",
                             "grad_norm", "subopt", "certified", "status"]
    rf = [int(r["rounds_f"]) for r in rows]
    assert rf == sorted(rf)


def test_summary_matches_independent_reread(tmp_path):
    cfg = write_cfg(tmp_path, algos="  - c_aeg\n  - name: vrcs\n    params: {p: 0.3}\n  - aeg", seeds="[0, 1]")
    assert main(["run", str(cfg)]) == 0
    summary = read_csv(tmp_path / "out" / "summary.csv")
    assert len(summary) == 6
    assert sorted((r["algorithm"], r["seed"]) for r in summary) == sorted(
        (a, s) for a in ("c_aeg", "vrcs", "aeg") for s in ("0", "1"))
    for row in summary:
        trace = read_csv(tmp_path / "out" / f"{row['algorithm']}_seed{row['seed']}.csv")
        hit = next(r for r in trace if float(r["grad_norm"]) <= 1e-6)
        assert row["rounds_f_to_eps"] == hit["rounds_f"]
        assert row["rounds_g_to_eps"] == hit["rounds_g"]
    med = read_csv(tmp_path / "out" / "summary_median.csv")
    assert [r["algorithm"] for r in med] == ["c_aeg", "vrcs", "aeg"]
    vr = [float(r["rounds_f_to_eps"]) for r in summary if r["algorithm"] == "vrcs"]
    assert float(med[1]["median_rounds_f_to_eps"]) == pytest.approx(sum(vr) / 2)


def test_byte_identical_reruns_and_jobs(tmp_path):
    cfg = write_cfg(tmp_path, algos="  - sc_aeg\n  - acc_vrcs", seeds="[3, 4]")
    main(["run", str(cfg), "--out-dir", str(tmp_path / "a")])
    main(["run", str(cfg), "--out-dir", str(tmp_path / "b"), "--jobs", "2"])
    for name in ("sc_aeg_seed3.csv", "acc_vrcs_seed4.csv", "summary.csv", "summary_median.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flags_override_config(tmp_path):
    cfg = write_cfg(tmp_path, seeds="[0, 1, 2]")
    assert main(["run", str(cfg), "--seed-override", "7", "--max-rounds", "10",
                 "--out-dir", str(tmp_path / "o")]) == 0
    summary = read_csv(tmp_path / "o" / "summary.csv")
    assert [r["seed"] for r in summary] == ["7"]
    assert summary[0]["status"] == "budget"
    assert summary[0]["rounds_f_to_eps"] == ""
    assert read_csv(tmp_path / "o" / "summary_median.csv")[0]["median_rounds_f_to_eps"] == repr(math.inf)


def test_divergence_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, algos="  - name: aeg\n    params: {theta_f: 50.0, eta_f: 50.0}")
    assert main(["run", str(cfg)]) == 2
    trace = read_csv(tmp_path / "out" / "aeg_seed0.csv")
    assert trace[-1]["status"] == "diverged"


@pytest.mark.parametrize("text,line", [
    ("problem:\n  kind: quadratic\n  d: [1\n", 4),
    ("problem:\n  kind: quadratic\n  d: 5\n  m_f: 2\n  m_g: 2\n  ratio: 1\n  mu: 0.1\nalgorithms: [c_aeg]\neps: -1\n", 9),
    ("problem:\n  kind: cubic\n", 2),
    ("problem:\n  kind: quadratic\n  d: 5\n  m_f: 2\n  m_g: 2\n  ratio: 1\n  mu: 0.1\nalgorithms:\n  - name: sgd\n", 9),
    ("problem:\n  kind: quadratic\n  d: 5\n  m_f: 2\n  m_g: 2\n  ratio: 1\n  mu: 0.1\n  colour: red\nalgorithms: [c_aeg]\n", 8),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError, match=f"cfg.yaml:{line}:"):
        parse_config(text, source="cfg.yaml")


def test_logistic_config(tmp_path):
    data = tmp_path / "data.csv"
    rows = ["label,x1,x2,group"] + [f"{1 if i % 2 else -1},{i % 7 - 3},{(i * 3) % 5 - 2},{'f' if i % 3 else 'g'}"
                                    for i in range(90)]
    data.write_text("\n".join(rows) + "\n")
    cfg = tmp_path / "l.yaml"
    cfg.write_text(f"problem:\n  kind: logistic\n  csv: data.csv\n  kappa: 0.8\n  m_f: 3\n  m_g: 3\n  l2: 0.05\n"
                   f"profile: {{mode: grid, points: 8}}\nalgorithms: [c_aeg, aeg]\noutput: {tmp_path / 'lo'}\n")
    assert load_config(cfg).problem["csv"] == str(data)
    assert main(["run", str(cfg)]) == 0
    assert len(read_csv(tmp_path / "lo" / "summary.csv")) == 2


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "none.yaml")]) == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "compsep", "run", str(write_cfg(tmp_path))],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "c_aeg" in out.stdout
