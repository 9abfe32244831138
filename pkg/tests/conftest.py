import pytest

from rexpath.synth import SynthConfig, VerticalSpec, generate_synthetic


def small_synth_config(pages=5, sites=2):
    return SynthConfig(verticals=[VerticalSpec("film", sites, pages),
                                  VerticalSpec("sport", sites, pages),
                                  VerticalSpec("campus", sites, pages)])


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(small_synth_config(), seed=7)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
