import re


def _key(line):
    m = re.search(r"criterion (\d+)(\w?)", line)
    return (int(m.group(1)), m.group(2)) if m else (99, "")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_key):
            terminalreporter.write_line(line)
