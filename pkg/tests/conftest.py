import re

_CRITERIA = {
    1: "gradient correctness",
    2: "causality",
    3: "overfit sanity",
    4: "oracle equivalence",
    5: "ablation ordering",
    6: "LM perplexity comparison",
    7: "attribution",
    8: "determinism and persistence",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, printed unconditionally."""
    results = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_criterion_(\d+)", nodeid)
            if m:
                n = int(m.group(1))
                results[n] = results.get(n, True) and status == "passed"
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for n in sorted(results):
            verdict = "PASS" if results[n] else "FAIL"
            terminalreporter.write_line(
                f"criterion {n} ({_CRITERIA.get(n, '?')}): {verdict}"
            )
