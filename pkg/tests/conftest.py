"""Suite-wide pytest wiring: prints the acceptance-criteria scoreboard after
the run. Each criterion test records its outcome before asserting, so failed
criteria still show up as explicit FAIL lines instead of vanishing."""

import helpers

_CRITERIA = {
    1: "analytic spiking gradient vs finite differences and production path",
    2: "personalized orchestration with mu=0 and resets reduces to plain averaging",
    3: "proximal-step hand value exact and contraction factor verified",
    4: "client drift never exceeds the gradient-norm bound",
    5: "smoothed-objective proxy matches the quadratic closed form",
    6: "regime accuracy ordering on the heterogeneous synthetic benchmark",
    7: "energy ratio within range and single-layer hand value exact",
    8: "firing sparsity reported and energy monotone over the (rate, steps) grid",
    9: "identical configs rerun to byte-identical metrics CSVs",
    10: "container round-trip lossless and malformed files rejected precisely",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = helpers.ACCEPTANCE_RESULTS
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_CRITERIA):
        if num in results:
            ok, detail = results[num]
            status = "PASS" if ok else "FAIL"
        else:
            status, detail = "NOT RUN", _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d} [{status}] {detail}")
