import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    import sys

    for mod in list(sys.modules.values()):
        lines = getattr(mod, "LINES", None)
        if getattr(mod, "__name__", "").endswith("test_acceptance") and lines:
            terminalreporter.section("acceptance criteria")
            for line in sorted(lines):
                terminalreporter.write_line(line)
