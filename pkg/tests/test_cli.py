import subprocess
import sys

import pytest

from ou_sampling.cli import CSV_COLUMNS, EXIT_CONFIG, EXIT_OK, fmt, main


def write_cfg(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def data_rows(text):
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


SMALL = "k_frames: 100\nn_runs: 2\npolicy: {kind: %s}\n"


def test_fmt():
    assert fmt(float("nan")) == "NaN"
    assert fmt(float("inf")) == "inf"
    assert fmt(0.1) == "0.1" and fmt(3) == "3" and fmt(True) == "true"
    assert float(fmt(1 / 3)) == 1 / 3


def test_simulate_is_byte_identical(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL % "online")
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", str(out_a)]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", str(out_b)]) == EXIT_OK
    capsys.readouterr()
    assert out_a.read_bytes() == out_b.read_bytes()
    assert "# resolved config:" in out_a.read_text()


def test_simulate_decimate_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL % "zero_wait")
    code, out, _ = run(["simulate", "--config", cfg, "--decimate", "1"], capsys)
    assert code == EXIT_OK
    rows = data_rows(out)
    assert rows[0] == ",".join(CSV_COLUMNS)
    body = rows[1:]
    assert len(body) == 101 and body[-1].startswith("summary,")
    assert [r.split(",")[0] for r in body[:-1]] == [str(k) for k in range(1, 101)]
    first = body[0].split(",")
    assert first[5:] == ["NaN", "NaN", "NaN"]
    s = [float(r.split(",")[1]) for r in body[:-1]]
    assert all(b > a for a, b in zip(s, s[1:]))


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "k_frames: 10\nfrobnicate: 1\n")
    code, out, err = run(["simulate", "--config", cfg], capsys)
    assert code == EXIT_CONFIG
    assert "error=config" in err and "frobnicate" in err
    assert out == ""


def test_bad_override_exit_code(capsys):
    assert run(["simulate", "--runs", "0"], capsys)[0] == EXIT_CONFIG
    assert run(["solve", "--seed", "-1"], capsys)[0] == EXIT_CONFIG


def parse_kv(text):
    return dict(ln.split("=", 1) for ln in text.splitlines() if "=" in ln)


def test_solve_unconstrained(capsys):
    code, out, _ = run(["solve"], capsys)
    assert code == EXIT_OK
    kv = parse_kv(out)
    assert kv["lambda_star"] == "0.0"
    assert kv["f_max"] == "inf"
    from ou_sampling.ou import REFERENCE_PARAMS
    from ou_sampling.solver import solve_alpha_star
    from ou_sampling.stopping import REFERENCE_DELAY

    assert float(kv["alpha_star"]) == solve_alpha_star(REFERENCE_DELAY, REFERENCE_PARAMS).alpha_star
    assert kv["curve.columns"] == "beta,v,o,l"
    assert sum(k.startswith("curve.") for k in kv) == 26


def test_solve_constrained(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "f_max: 0.02\n")
    code, out, _ = run(["solve", "--config", cfg], capsys)
    assert code == EXIT_OK
    kv = parse_kv(out)
    assert float(kv["lambda_star"]) > 0
    beta = float(kv["beta_star"])
    from ou_sampling.ou import REFERENCE_PARAMS
    from ou_sampling.stopping import REFERENCE_DELAY, expected_frame_stats

    assert expected_frame_stats(beta, REFERENCE_DELAY, REFERENCE_PARAMS).l == pytest.approx(50.0, rel=1e-4)


def test_single_policy_compare_matches_simulate(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL % "oracle" + "policies: [{kind: oracle}]\n")
    _, sim, _ = run(["simulate", "--config", cfg], capsys)
    _, cmp_, _ = run(["compare", "--config", cfg], capsys)
    sim_rows, cmp_rows = data_rows(sim), data_rows(cmp_)
    assert cmp_rows[0] == "policy," + sim_rows[0]
    assert [r.split(",", 1)[1] for r in cmp_rows[1:]] == sim_rows[1:]
    assert all(r.startswith("oracle,") for r in cmp_rows[1:])


def test_compare_ordering(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "k_frames: 1000\nn_runs: 4\npolicies: [zero_wait, oracle]\n")
    code, out, _ = run(["compare", "--config", cfg], capsys)
    assert code == EXIT_OK
    summ = {r.split(",")[0]: r.split(",") for r in data_rows(out) if ",summary," in r}
    assert float(summ["oracle"][3]) <= float(summ["zero_wait"][3])


def test_compare_needs_policies(capsys):
    code, _, err = run(["compare", "--frames", "5"], capsys)
    assert code == EXIT_CONFIG and "policies" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ou_sampling", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
