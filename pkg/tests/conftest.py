import sys
import time

import numpy as np
import pytest

from peakcgan import cgan, kernels
from peakcgan.simulator import TABLE4A_CONDITIONS, make_dataset, stratified_counts

DESK_T = 512
DESK_RECORDS = 200
DESK_ITERATIONS = 3000
# a 64-sample STFT window cannot place peaks only ~2 samples wide at T=512
DESK_STFT = dict(stft_window=16, stft_hop=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numpy", "cython"])
def backend(request):
    """Run a test under each available kernel backend, restoring the default after."""
    if request.param == "cython" and kernels.compiled_backend is None:
        pytest.skip("compiled kernels not built")
    before = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(before)


@pytest.fixture(scope="session")
def desk_gan():
    """Desk-scale generator (T=512, 200 records, 3000 iterations), trained once per session.

    Returns ``(real_records, train_result, training_seconds)``.
    """
    real = make_dataset(stratified_counts(DESK_RECORDS, len(TABLE4A_CONDITIONS)), seed=0, T=DESK_T)
    gcfg = cgan.GeneratorConfig(output_dim=DESK_T)
    tcfg = cgan.TrainConfig(iterations=DESK_ITERATIONS, batch=16, seed=0, **DESK_STFT)
    t0 = time.perf_counter()
    res = cgan.train_cgan(real, tcfg, gcfg)
    return real, res, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
