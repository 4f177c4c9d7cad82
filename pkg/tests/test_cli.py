"""CLI behavior: config files, overrides, determinism, outputs, exit codes."""

import re
import subprocess
import sys

import numpy as np
import pytest

from coupled_turbo import cli
from coupled_turbo.coupling import load_chain


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def grab(pattern, text):
    m = re.search(pattern, text)
    assert m, f"{pattern!r} not found in:\n{text}"
    return float(m.group(1))


def test_threshold_pic_half(capsys):
    code, out, _ = run_cli(capsys, "threshold", "--family", "pic",
                           "--lambda", "1/2", "--m", "1", "--L", "20")
    assert code == 0
    assert abs(grab(r"eps_bp = ([\d.]+)", out) - 0.7926) < 5e-4


def test_threshold_ppc_sixteenth(capsys):
    code, out, _ = run_cli(capsys, "threshold", "--family", "ppc",
                           "--lambda", "1/16", "--L", "100")
    assert code == 0
    assert abs(grab(r"eps_bp = ([\d.]+)", out) - 0.6622) < 5e-4


def test_threshold_uncoupled_is_strictly_worse(capsys):
    code, out, _ = run_cli(capsys, "threshold", "--family", "pic",
                           "--lambda", "0", "--L", "2")
    assert code == 0
    assert grab(r"eps_bp = ([\d.]+)", out) < 0.6628


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "th.cfg"
    cfg.write_text(
        "# threshold settings\n"
        "family = pic   # inline comment\n"
        "lambda = 1/2\n"
        "L = 8\n")
    code, base, _ = run_cli(capsys, "threshold", "--config", str(cfg))
    assert code == 0
    assert "# lambda = 1/2" in base
    # the flag must win over the file value
    code, over, _ = run_cli(capsys, "threshold", "--config", str(cfg),
                            "--lambda", "1/4")
    assert code == 0
    assert "# lambda = 1/4" in over
    assert grab(r"eps_bp = ([\d.]+)", over) != grab(r"eps_bp = ([\d.]+)", base)


def test_unknown_config_key_is_fatal(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("family = pic\nbogus = 3\n")
    code, _, err = run_cli(capsys, "threshold", "--config", str(cfg),
                           "--lambda", "1/2")
    assert code == 1
    assert "bogus" in err and "valid keys" in err


def test_missing_required_key_is_fatal(capsys):
    code, _, err = run_cli(capsys, "threshold", "--lambda", "1/2")
    assert code == 0 or code == 1
    assert code == 1
    assert "family" in err


def test_bad_rational_is_fatal(capsys):
    code, _, err = run_cli(capsys, "map-threshold", "--rate", "one/third")
    assert code == 1
    assert "rational" in err


def test_rationals_echo_exactly(capsys):
    code, out, _ = run_cli(capsys, "awgn", "--eps", "0.6576",
                           "--rate", "1/3")
    assert code == 0
    assert "# rate = 1/3" in out
    assert abs(grab(r"ebn0_db = ([-+\d.]+)", out) - (-0.345)) < 0.01


def test_map_threshold_value(capsys):
    code, out, _ = run_cli(capsys, "map-threshold", "--rate", "0.3043")
    assert code == 0
    assert abs(grab(r"eps_map = ([\d.]+)", out) - 0.6808) < 1e-3


def test_transfer_grid_output(tmp_path, capsys):
    out_csv = tmp_path / "grid.csv"
    code, _, _ = run_cli(capsys, "transfer", "--points", "5",
                         "--output", str(out_csv))
    assert code == 0
    lines = out_csv.read_text().splitlines()
    header = [ln for ln in lines if not ln.startswith("#")]
    assert header[0] == "pbar,qbar,f_p,f_q"
    assert len(header) == 1 + 25
    # both transfers vanish when nothing is erased and hit (eps-free) caps at 1
    first = header[1].split(",")
    assert float(first[2]) == 0.0 and float(first[3]) == 0.0


BER_ARGS = ("ber", "--family", "ppc", "--lambda", "1/4", "--m", "1",
            "--L", "4", "--K", "200", "--eps", "0.6",
            "--min-error-events", "50", "--max-chains", "30")


def test_ber_seed_determinism(capsys):
    code, first, _ = run_cli(capsys, "--seed", "7", *BER_ARGS)
    assert code == 0
    code, again, _ = run_cli(capsys, *BER_ARGS, "--seed", "7")
    assert first == again  # also: seed accepted on either side of the command
    code, other, _ = run_cli(capsys, "--seed", "8", *BER_ARGS)
    assert first != other


def test_output_files_carry_config_header(tmp_path, capsys):
    out_csv = tmp_path / "ber.csv"
    script = tmp_path / "ber.gp"
    code, _, _ = run_cli(capsys, *BER_ARGS, "--output", str(out_csv),
                         "--gnuplot", str(script))
    assert code == 0
    text = out_csv.read_text()
    assert "# family = ppc" in text
    assert "# lambda = 1/4" in text
    data = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert data[0].startswith("eps,rate,family")
    assert len(data) == 2
    assert str(out_csv) in script.read_text()


def test_optimize_writes_curve(tmp_path, capsys):
    out_csv = tmp_path / "curve.csv"
    code, out, _ = run_cli(capsys, "optimize", "--family", "pic",
                           "--rate", "9/10", "--L", "50",
                           "--lam-min", "0.48", "--lam-max", "0.5",
                           "--step", "1/50", "--refine-step", "1/50",
                           "--output", str(out_csv))
    assert code == 0
    assert abs(grab(r"eps_bp = ([\d.]+)", out) - 0.0863) < 5e-4
    assert "lam = 1/2" in out
    text = out_csv.read_text().splitlines()
    assert any(ln.startswith("# rate = 9/10") for ln in text)
    rows = [ln for ln in text if not ln.startswith("#")]
    assert rows[0] == "family,rate,m,lam,rho,eps_bp,best"
    assert sum(ln.endswith(",1") for ln in rows[1:]) == 1


def test_roundtrip_and_trace_file(tmp_path, capsys):
    trace = tmp_path / "chain.ctc"
    code, out, _ = run_cli(capsys, "roundtrip", "--family", "pic",
                           "--lambda", "1/4", "--m", "1", "--L", "6",
                           "--K", "400", "--eps", "0.45",
                           "--save-trace", str(trace), "--seed", "3")
    assert code == 0
    assert grab(r"wrong = (\d+)", out) == 0
    assert grab(r"ber = ([\d.e+-]+)", out) <= 1e-2
    rx = load_chain(str(trace))
    assert rx.cfg.K == 400 and rx.cfg.L == 6
    assert len(rx.sys_obs) == 6


def test_window_roundtrip(capsys):
    code, out, _ = run_cli(capsys, "roundtrip", "--family", "ppc",
                           "--lambda", "1/4", "--m", "1", "--L", "6",
                           "--K", "400", "--eps", "0.45",
                           "--decoder", "window", "--W", "3")
    assert code == 0
    assert grab(r"ber = ([\d.e+-]+)", out) <= 1e-2


def test_window_without_W_is_fatal(capsys):
    code, _, err = run_cli(capsys, "roundtrip", "--family", "ppc",
                           "--lambda", "1/4", "--m", "1", "--L", "6",
                           "--K", "400", "--eps", "0.1",
                           "--decoder", "window")
    assert code == 1
    assert "W" in err


def test_help_covers_all_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("threshold", "optimize", "ber", "transfer",
                 "map-threshold", "awgn", "roundtrip"):
        assert name in out
    with pytest.raises(SystemExit) as exc:
        cli.main(["ber", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--eps", "--decoder", "--output"):
        assert flag in out


def test_bad_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["threshold", "--no-such-flag", "1"])
    assert exc.value.code != 0


def test_console_script_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "coupled_turbo.cli",
         "awgn", "--eps", "0.5", "--rate", "1/2"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "ebn0_db" in proc.stdout
