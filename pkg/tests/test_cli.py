"""End-to-end checks of the command-line surface.

Everything runs main() in process except the serve test, which needs a
real second process to exercise socket shutdown.
"""
import random
import subprocess
import sys

import pytest

from conftest import TEST_USERS
from seallink.chain import parse_manifest
from seallink.cli import main
from seallink.pcap import parse_capture_file
from seallink.storage import Storage, save_user_db

INSECURE = ["--key-bits", "512", "--insecure-test", "--keygen-seed", "9"]


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Generated captures plus one signed call, shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    paths = {
        "a": str(root / "a.pcap"),
        "b": str(root / "b.pcap"),
        "dump": str(root / "call.pcap"),
        "manifest": str(root / "call.manifest"),
        "users": str(root / "users.xml"),
        "root": root,
    }
    (root / "users.xml").write_bytes(save_user_db(TEST_USERS))
    assert main(["gen", "--duration", "2.0", "--seed", "42",
                 "--out", paths["a"], paths["b"]]) == 0
    assert main(["sign", "--in", paths["a"], paths["b"], "--call-id", "demo",
                 "--out-dump", paths["dump"], "--out-manifest", paths["manifest"],
                 *INSECURE]) == 0
    return paths


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- gen / sign / verify ---------------------------------------------------------

def test_gen_writes_deterministic_captures(tmp_path, capsys):
    out = [str(tmp_path / "x.pcap"), str(tmp_path / "y.pcap")]
    code, stdout, _ = run_cli(["gen", "--duration", "1.0", "--seed", "5",
                               "--out", *out], capsys)
    assert code == 0
    assert "wrote 50 packets" in stdout
    first = (tmp_path / "x.pcap").read_bytes()
    assert len(parse_capture_file(first)) == 50
    code, _, _ = run_cli(["gen", "--duration", "1.0", "--seed", "5",
                          "--out", str(tmp_path / "x2.pcap"), out[1]], capsys)
    assert code == 0
    assert (tmp_path / "x2.pcap").read_bytes() == first


def test_gen_rejects_bad_duration(tmp_path, capsys):
    code, _, stderr = run_cli(["gen", "--duration", "0", "--out",
                               str(tmp_path / "a"), str(tmp_path / "b")], capsys)
    assert code == 2
    assert "error:" in stderr


def test_sign_reports_chain_facts(ws, capsys):
    out = str(ws["root"] / "re.pcap")
    man = str(ws["root"] / "re.manifest")
    code, stdout, _ = run_cli(["sign", "--in", ws["a"], ws["b"],
                               "--out-dump", out, "--out-manifest", man,
                               *INSECURE], capsys)
    assert code == 0
    assert "packets: 200" in stdout
    assert "chunks: 40" in stdout
    assert "groups: 8" in stdout
    assert "exponent: 65537" in stdout
    manifest = parse_manifest((ws["root"] / "re.manifest").read_text())
    assert manifest.insecure


def test_sign_refuses_weak_keys_without_opt_in(ws, tmp_path, capsys):
    code, _, stderr = run_cli(["sign", "--in", ws["a"], ws["b"],
                               "--key-bits", "512",
                               "--out-dump", str(tmp_path / "d"),
                               "--out-manifest", str(tmp_path / "m")], capsys)
    assert code == 2
    assert "error:" in stderr


def test_verify_good_dump(ws, capsys):
    code, stdout, _ = run_cli(["verify", "--dump", ws["dump"],
                               "--manifest", ws["manifest"]], capsys)
    assert code == 0
    assert "AllOk" in stdout


def test_verify_missing_file_is_a_usage_error(ws, tmp_path, capsys):
    code, _, stderr = run_cli(["verify", "--dump", str(tmp_path / "nope.pcap"),
                               "--manifest", ws["manifest"]], capsys)
    assert code == 2
    assert "error:" in stderr


def test_superhash_dump(ws, tmp_path, capsys):
    sh_file = tmp_path / "superhashes.txt"
    code, _, _ = run_cli(["sign", "--in", ws["a"], ws["b"],
                          "--out-dump", str(tmp_path / "d.pcap"),
                          "--out-manifest", str(tmp_path / "m.txt"),
                          "--dump-superhashes", str(sh_file), *INSECURE], capsys)
    assert code == 0
    text = sh_file.read_text()
    assert text.startswith("Group 0:\n")
    assert "Group 7:" in text


def test_sign_with_watermark(ws, tmp_path, capsys):
    code, stdout, _ = run_cli(["sign", "--in", ws["a"], ws["b"],
                               "--watermark", "+49123>+49111",
                               "--out-dump", str(tmp_path / "d.pcap"),
                               "--out-manifest", str(tmp_path / "m.txt"),
                               *INSECURE], capsys)
    assert code == 0
    assert "watermark: 200 embedded, 0 skipped" in stdout


# --- tamper ------------------------------------------------------------------------

@pytest.mark.parametrize(
    "mutation",
    [["--flip-bit", "150000"], ["--drop-packet", "60"], ["--swap", "3", "170"]],
)
def test_tampered_dumps_fail_verification(ws, tmp_path, capsys, mutation):
    bad = str(tmp_path / "bad.pcap")
    code, _, _ = run_cli(["tamper", "--dump", ws["dump"], "--out", bad, *mutation],
                         capsys)
    assert code == 0
    code, stdout, _ = run_cli(["verify", "--dump", bad,
                               "--manifest", ws["manifest"]], capsys)
    assert code == 1
    assert "Failed" in stdout


def test_tamper_range_checks(ws, tmp_path, capsys):
    code, _, stderr = run_cli(["tamper", "--dump", ws["dump"],
                               "--out", str(tmp_path / "x"),
                               "--drop-packet", "9999"], capsys)
    assert code == 2
    assert "out of range" in stderr


# --- config file and environment ----------------------------------------------------

def test_config_file_sets_defaults(ws, tmp_path, capsys):
    cfg = tmp_path / "seallink.cfg"
    cfg.write_text("# defaults\nchunk_size=4\ngroup_size=3\n")
    code, _, _ = run_cli(["--config", str(cfg), "sign", "--in", ws["a"], ws["b"],
                          "--out-dump", str(tmp_path / "d.pcap"),
                          "--out-manifest", str(tmp_path / "m.txt"),
                          *INSECURE], capsys)
    assert code == 0
    manifest = parse_manifest((tmp_path / "m.txt").read_text())
    assert manifest.chunk_size == 4
    assert manifest.group_size == 3


def test_cli_flags_override_config(ws, tmp_path, capsys):
    cfg = tmp_path / "seallink.cfg"
    cfg.write_text("chunk_size=4\n")
    code, _, _ = run_cli(["--config", str(cfg), "sign", "--in", ws["a"], ws["b"],
                          "--chunk-size", "10",
                          "--out-dump", str(tmp_path / "d.pcap"),
                          "--out-manifest", str(tmp_path / "m.txt"),
                          *INSECURE], capsys)
    assert code == 0
    assert parse_manifest((tmp_path / "m.txt").read_text()).chunk_size == 10


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("volume=11\n")
    code, _, stderr = run_cli(["--config", str(cfg), "list"], capsys)
    assert code == 2
    assert "unknown or bad entry" in stderr


def test_data_dir_from_environment(ws, tmp_path, capsys, monkeypatch):
    data_dir = tmp_path / "env-data"
    store = Storage(data_dir, users=list(TEST_USERS), rng=random.Random(6))
    packets = parse_capture_file((ws["root"] / "call.pcap").read_bytes())
    manifest = parse_manifest((ws["root"] / "call.manifest").read_text())
    tid = store.store_call(packets, manifest, "+491234567890", "+491111111111",
                           "2015-01-05T10:00:00Z")
    store.confirm_call(tid)
    monkeypatch.setenv("SEALLINK_DATA_DIR", str(data_dir))
    code, stdout, _ = run_cli(["list"], capsys)
    assert code == 0
    assert tid in stdout and "1 call(s)" in stdout
    code, stdout, _ = run_cli(["list", "--subscriber", "+491234567890"], capsys)
    assert tid in stdout
    code, stdout, _ = run_cli(["list", "--subscriber", "+440"], capsys)
    assert "0 call(s)" in stdout
    code, stdout, _ = run_cli(["get", "--tracking-id", tid, "--verify",
                               "--out-dump", str(tmp_path / "export.pcap")], capsys)
    assert code == 0
    assert "AllOk" in stdout
    assert (tmp_path / "export.pcap").exists()


def test_get_unknown_tracking_id(tmp_path, capsys):
    code, _, stderr = run_cli(["get", "--data-dir", str(tmp_path),
                               "--tracking-id", "00" * 8], capsys)
    assert code == 2
    assert "error:" in stderr


# --- session scripts ------------------------------------------------------------------

HAPPY = """EVENT UssdReceived *123*+491111111111*1234#
EVENT PinOk
EVENT CalleeAnswered
EVENT CalleeAccept
ADVANCE 2.0
EVENT Hangup
EVENT ConfirmYes
"""


def test_session_script_happy_path(ws, tmp_path, capsys):
    script = tmp_path / "happy.script"
    script.write_text(HAPPY)
    code, stdout, _ = run_cli(["session", "--script", str(script),
                               "--caller", "+491234567890",
                               "--users", ws["users"],
                               "--data-dir", str(tmp_path / "data"),
                               "--in", ws["a"], ws["b"], *INSECURE], capsys)
    assert code == 0
    assert "final state: Completed" in stdout
    assert "tracking:" in stdout
    assert "BILLABLE" in stdout


def test_session_script_mismatch(ws, tmp_path, capsys):
    script = tmp_path / "lie.script"
    script.write_text("EVENT UssdReceived *123*+491111111111*9999#\nEVENT PinOk\n")
    code, _, stderr = run_cli(["session", "--script", str(script),
                               "--caller", "+491234567890",
                               "--users", ws["users"],
                               "--data-dir", str(tmp_path / "data"),
                               "--in", ws["a"], ws["b"], *INSECURE], capsys)
    assert code == 2
    assert "authentication says" in stderr


# --- report ------------------------------------------------------------------------------

def test_report_writes_csv_and_figures(tmp_path, capsys):
    out_dir = tmp_path / "report"
    code, stdout, _ = run_cli(["report", "--out-dir", str(out_dir),
                               "--duration", "1.0", "--seed", "3"], capsys)
    assert code == 0
    assert "verdict: AllOk" in stdout
    csv_path = out_dir / "timings.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "phase,index,ms"
    assert len(lines) > 20  # one row per chunk hash plus signing and verify rows
    pngs = sorted(p.name for p in out_dir.glob("*.png"))
    assert pngs == ["op_times.png", "stage_times.png"]
    for name in pngs:
        assert (out_dir / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# --- serve / submit -----------------------------------------------------------------------

def test_serve_and_submit_round_trip(ws, tmp_path, capsys):
    data_dir = tmp_path / "srv-data"
    proc = subprocess.Popen(
        [sys.executable, "-c", "from seallink.cli import main; raise SystemExit(main())",
         "serve", "--listen", "127.0.0.1:0", "--data-dir", str(data_dir),
         "--users", ws["users"], "--max-sessions", "1"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        banner = proc.stdout.readline()
        assert banner.startswith("listening on ")
        hostport = banner.split()[-1]
        code, stdout, _ = run_cli(["submit", "--connect", hostport,
                                   "--dump", ws["dump"], "--manifest", ws["manifest"],
                                   "--caller", "+491234567890",
                                   "--callee", "+491111111111",
                                   "--start-time", "2015-01-05T10:00:00Z"], capsys)
        assert code == 0
        assert "submitted demo (200 packets)" in stdout
        out, err = proc.communicate(timeout=15)
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.communicate()
    assert proc.returncode == 0, err
    assert "stored demo as" in out
    code, stdout, _ = run_cli(["list", "--data-dir", str(data_dir)], capsys)
    assert code == 0
    assert "PendingConfirmation" in stdout and "1 call(s)" in stdout


def test_submit_connection_refused(ws, capsys):
    code, _, stderr = run_cli(["submit", "--connect", "127.0.0.1:1",
                               "--dump", ws["dump"], "--manifest", ws["manifest"],
                               "--caller", "+1", "--callee", "+2"], capsys)
    assert code == 2
    assert "error:" in stderr


# --- argparse plumbing -----------------------------------------------------------------------

def test_no_arguments_is_a_usage_error(capsys):
    assert run_cli([], capsys)[0] == 2


def test_unknown_subcommand_is_a_usage_error(capsys):
    assert run_cli(["frobnicate"], capsys)[0] == 2


def test_dangling_config_flag(capsys):
    code, _, stderr = run_cli(["--config"], capsys)
    assert code == 2
    assert "--config needs a path" in stderr
