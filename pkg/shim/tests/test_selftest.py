import subprocess
import sys

from ocrshim.selftest import run_selftest


def test_selftest_passes_every_check():
    checks = run_selftest()
    failed = [c for c in checks if not c.ok]
    assert not failed, failed
    assert {c.name for c in checks} >= {
        "capability-announce",
        "empty-batch",
        "ordered-batch-shape",
        "ordered-batch-determinism",
        "ordered-batch-order",
        "malformed-line-notice",
        "alive-after-malformed",
    }


def test_selftest_flag_exits_zero():
    proc = subprocess.run(
        [sys.executable, "-m", "ocrshim", "--selftest"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "checks passed" in proc.stdout


def test_bad_checkpoint_fails_startup_with_machine_readable_reason():
    proc = subprocess.run(
        [sys.executable, "-m", "ocrshim", "serve", "--engine", "trocr",
         "--model", "/nonexistent/checkpoint"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode != 0
    import json

    reason = json.loads(proc.stderr.strip().splitlines()[-1])
    assert "startup_error" in reason
    assert reason["model"] == "/nonexistent/checkpoint"
