"""Shared test plumbing: the shipping-criteria scoreboard.

Checks registered through `record` get one printed PASS/FAIL line each at the
end of the run, so the release checklist is readable without digging through
pytest output."""

CRITERIA = (
    "gradient suite",
    "attention oracle",
    "structure invariants",
    "synthetic task learning",
    "head-mode ordering",
    "direction ordering",
    "layer sweep table",
    "loss and accuracy formulas",
    "determinism",
    "dialogue loader",
)

_results: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str = "") -> None:
    """Log a criterion outcome for the end-of-run summary, then let the
    caller assert on ok."""
    assert criterion in CRITERIA, f"unknown criterion {criterion!r}"
    _results[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    tr = terminalreporter
    tr.section("shipping criteria")
    for name in CRITERIA:
        if name not in _results:
            tr.write_line(f"{name:28s} NOT RUN")
            continue
        ok, detail = _results[name]
        suffix = f"  ({detail})" if detail else ""
        tr.write_line(f"{name:28s} {'PASS' if ok else 'FAIL'}{suffix}")
