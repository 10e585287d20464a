import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_registry


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_registry.RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, ok in acceptance_registry.RESULTS:
            status = "PASS" if ok else "FAIL"
            terminalreporter.write_line(f"[ACCEPT] {name}: {status}")
