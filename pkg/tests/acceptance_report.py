"""Collects one verdict per acceptance criterion for the terminal summary."""
RESULTS: dict = {}


def report(n: int, ok: bool, title: str, detail: str) -> None:
    RESULTS[n] = (bool(ok), title, detail)
    print(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, f"criterion {n} failed: {detail}"
