import numpy as np
import pytest

from jointsparse.signal_model import (
    NoiseModel,
    RngStream,
    SparsityConfig,
    gen_measurement_matrix,
    gen_sample_set,
    gen_signals,
    gen_support,
    measure,
)
from jointsparse.network import NetworkArch, init_params
from jointsparse.solvers import GroupLassoProblem, StepSchedule, kkt_threshold
from jointsparse.training import kink_margins, loss_and_gradients


def make_instance(seed, N=50, L=15, M=4, p=0.1, sigma2=0.1, lam_frac=0.1):
    """Random MMV instance; returns (problem, x_true)."""
    s = RngStream(seed)
    x = gen_signals(gen_support(SparsityConfig("iid", N, p=p), s.child(1)), N, M, s.child(2))
    a = gen_measurement_matrix(L, N, s.child(3))
    y = measure(a, x, NoiseModel(sigma2), s.child(4))
    return GroupLassoProblem(a, y, lam_frac * kkt_threshold(a, y)), x


def fd_setup(seed, N=20, L=8, M=2, U=3, V=2, lam=3.0, batch=1):
    """Small network, sample and frozen noise draw for gradient checks."""
    arch = NetworkArch(N, L, M, U=U, V=V, lam=lam, schedule=StepSchedule(gamma0=0.3))
    params = init_params(arch, RngStream(seed))
    gen = RngStream(seed, 2).generator()
    # zero biases would put every all-zero row exactly on the ReLU kink
    for branch in (params.layers_re, params.layers_im):
        for _, b in branch:
            b[:] = 0.5 * gen.standard_normal(b.shape)
    x = gen_sample_set(SparsityConfig("iid", N, p=0.3), M, batch, RngStream(seed, 1))
    noise = (np.sqrt(0.05) * gen.standard_normal((batch, L, M)),
             np.sqrt(0.05) * gen.standard_normal((batch, L, M)))
    return params, x, noise


def fd_point(seed, margin=1e-3, **kw):
    """First draw at or after ``seed`` whose forward pass keeps every row norm
    and ReLU pre-activation at least ``margin`` away from its kink.

    Returns ``(params, x, noise, loss, grads, draw_seed)``.
    """
    for attempt in range(1000):
        s = 1000 * seed + attempt
        params, x, noise = fd_setup(s, **kw)
        loss, grads, trace = loss_and_gradients(params, x, NoiseModel(0.0), noise_draw=noise)
        if min(kink_margins(params, trace)) > margin:
            return params, x, noise, loss, grads, s
    raise RuntimeError("no kink-free draw found")


@pytest.fixture
def instance():
    return make_instance(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
