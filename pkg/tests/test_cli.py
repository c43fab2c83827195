import json

from qp4link.cli import EXIT_CONFIG, EXIT_OK, EXIT_TRAPS, EXIT_USAGE, main, shipped_scenarios

from conftest import SCENARIOS


def test_shipped_names():
    assert {"ideal", "lossy", "misaligned"} <= set(shipped_scenarios())


def test_run_writes_report_and_figures(tmp_path):
    out = tmp_path / "report.json"
    figs = tmp_path / "figs"
    code = main(["run", "--scenario", str(SCENARIOS / "ideal.toml"), "--seed", "3",
                 "--cycles", "50", "--out", str(out), "--figures", str(figs)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["seed"] == 3 and report["pair_seq_final"] == 50
    for name in ("outcomes.png", "successes.png"):
        assert (figs / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_run_csv_to_stdout(capsysbinary):
    assert main(["run", "--scenario", "lossy", "--seed", "1", "--cycles", "100",
                 "--format", "csv-summary"]) == EXIT_OK
    lines = capsysbinary.readouterr().out.decode().splitlines()
    assert len(lines) == 2 and lines[0].startswith("scenario,")


def test_validate(capsys):
    assert main(["validate", "--scenario", "asymmetric"]) == EXIT_OK
    assert "asymmetric: ok" in capsys.readouterr().out
    assert main(["validate", "--scenario", "misaligned"]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "misaligned arrivals" in err and "phase_ns" in err


def test_usage_errors(capsys):
    assert main(["run", "--scenario", "ideal"]) == EXIT_USAGE
    assert main(["run", "--scenario", "ideal", "--seed", "1", "--bogus"]) == EXIT_USAGE
    assert main(["run", "--scenario", "ideal", "--seed", "-1"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_missing_scenario_file(tmp_path):
    assert main(["validate", "--scenario", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_trap_budget_exit_code(tmp_path, monkeypatch):
    from qp4link import harness

    original = harness.Simulation.start

    def start(self):
        original(self)
        self.sim.attach("junk", lambda ev: self.on_cpu_packet("A", b"\x00"))
        self.sim.schedule(1, "junk", None)

    monkeypatch.setattr(harness.Simulation, "start", start)
    assert main(["run", "--scenario", "ideal", "--seed", "1", "--cycles", "2"]) == EXIT_TRAPS
