"""Run log with test-set access control.

Every read of a data subset goes through :class:`AccessLog`.  Test indices
are handed out only for runs whose model selection has been finalized, and
the textual log can be re-audited after the fact with :func:`audit_lines`.
"""
from __future__ import annotations

import re

from .errors import TestAccessViolation

SUBSETS = ("train", "val", "test")
_ACCESS = re.compile(r"^ACCESS run=(\S+) subset=(\S+) purpose=(\S+)$")
_FINAL = re.compile(r"^FINALIZE run=(\S+)$")


class AccessLog:
    def __init__(self):
        self.lines = []
        self._final = set()

    def record(self, run, subset, purpose):
        if subset not in SUBSETS:
            raise ValueError(f"unknown subset {subset!r}")
        if subset == "test" and run not in self._final:
            raise TestAccessViolation(f"run {run}: test access before selection was finalized")
        self.lines.append(f"ACCESS run={run} subset={subset} purpose={purpose}")

    def finalize(self, run):
        self._final.add(run)
        self.lines.append(f"FINALIZE run={run}")

    def test_indices(self, run, split, purpose="final-eval"):
        self.record(run, "test", purpose)
        return split.test

    def note(self, text):
        for line in str(text).splitlines():
            self.lines.append(f"NOTE {line}")

    def extend(self, other):
        self.lines.extend(other.lines)
        self._final |= other._final


def audit_lines(lines):
    """Violations in a run log: test access without a prior FINALIZE of that run."""
    final, problems = set(), []
    for n, line in enumerate(lines, 1):
        m = _FINAL.match(line)
        if m:
            final.add(m.group(1))
            continue
        m = _ACCESS.match(line)
        if m and m.group(2) == "test" and m.group(1) not in final:
            problems.append(f"line {n}: {line}")
    return problems
