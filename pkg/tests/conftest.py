import pytest

from noma_offload import sample_channel, reference_scenario


@pytest.fixture
def two_device():
    scenario = reference_scenario(n_devices=2)
    return scenario, sample_channel(scenario, 7)


@pytest.fixture
def four_device():
    scenario = reference_scenario(n_devices=4)
    return scenario, sample_channel(scenario, 11)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_criterion_key):
            terminalreporter.write_line(line)


def _criterion_key(line):
    label = line.split("criterion ", 1)[1].split(":", 1)[0]
    return int("".join(ch for ch in label if ch.isdigit())), label
