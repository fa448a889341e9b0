from __future__ import annotations

from collections import Counter


class OpCounter(Counter):
    """Tally of work done on a code path.

    Keys in use: ``"nonlinear_evals"`` (scalar evaluations of a nonlinear
    function), ``"fine_flops"`` (multiply-adds touching fine-grid data) and
    ``"coarse_flops"``.
    """

    def add(self, key: str, n: int = 1) -> None:
        self[key] += int(n)


def tally(counter: OpCounter | None, key: str, n: int) -> None:
    if counter is not None:
        counter.add(key, n)
