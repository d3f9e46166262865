import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("quick", max_examples=30, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest

# criterion number -> list of (part, passed, detail)
_ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def criterion():
    def record(number: int, part: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE.setdefault(number, []).append((part, bool(passed), detail))
        print(f"ACCEPTANCE criterion {number} [{part}]: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[number]
        status = "PASS" if all(p[1] for p in parts) else "FAIL"
        detail = "; ".join(f"{name}: {'ok' if ok else 'FAILED'} {d}".rstrip() for name, ok, d in parts)
        terminalreporter.write_line(f"ACCEPTANCE criterion {number}: {status} ({detail})")
