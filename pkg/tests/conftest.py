import numpy as np
import pytest

from bitwave import bitkernel


@pytest.fixture(params=bitkernel.available_backends())
def backend(request):
    with bitkernel.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20180418)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Eight short mixtures at 0 dB SNR, shared across tests."""
    from bitwave.dsp import SynthConfig, generate_dataset, load_manifest

    out = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(out_dir=str(out), counts=(4, 2, 2), snr_list=(0.0,), seed=11, duration_s=1.5)
    return load_manifest(generate_dataset(cfg))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_line(request):
    """Emit one PASS/FAIL line for an acceptance criterion, even under output capture."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def emit(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {number} {title}: {detail}"
        lines.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
