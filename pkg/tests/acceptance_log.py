"""One verdict line per acceptance criterion, printed in the terminal summary."""
from __future__ import annotations

VERDICTS: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    VERDICTS[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(VERDICTS[criterion])
    return ok
