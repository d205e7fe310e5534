import re

_ACCEPT = re.compile(r"test_c(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance check, visible regardless of capture."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call":
                continue
            m = _ACCEPT.search(rep.nodeid)
            if m and "test_acceptance" in rep.nodeid:
                label = m.group(2).replace("_", " ")
                verdict = "PASS" if outcome == "passed" else "FAIL"
                rows.append((int(m.group(1)), f"[acceptance] C{int(m.group(1))} {label}: {verdict}"))
    if rows:
        terminalreporter.write_line("")
        for _, line in sorted(rows):
            terminalreporter.write_line(line)
