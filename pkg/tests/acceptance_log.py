"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, str] = {}


def record(number: int, title: str, passed: bool, detail: str) -> bool:
    verdict = "PASS" if passed else "FAIL"
    RESULTS[number] = f"criterion {number:2d} {verdict}  {title}: {detail}"
    print(RESULTS[number])
    return passed
