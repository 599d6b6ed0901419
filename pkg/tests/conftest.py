import numpy as np
import pytest

from press import _kernels

KERNEL_NAMES = ("linear_scan", "gamma_p", "ln_gamma", "depthwise_conv", "depthwise_conv_grad")

BACKENDS = ["numpy"] + (["compiled"] if _kernels.compiled_backend is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call through one backend for the duration of a test."""
    mod = _kernels.numpy_backend if request.param == "numpy" else _kernels.compiled_backend
    for name in KERNEL_NAMES:
        monkeypatch.setattr(_kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance reporting

N_CRITERIA = 9
_CRITERIA_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def criteria(request):
    """Collects ``(passed, detail)`` checks per acceptance criterion for the summary."""
    store = request.config.stash.setdefault(_CRITERIA_KEY, {})
    for n in range(1, N_CRITERIA + 1):
        store.setdefault(n, [])

    def check(n: int, ok: bool, detail: str) -> None:
        store[n].append((bool(ok), detail))
        assert ok, f"criterion {n}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA_KEY, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        checks = store[n]
        if not checks:
            terminalreporter.write_line(f"criterion {n}: FAIL (not evaluated)")
            continue
        ok = all(c[0] for c in checks)
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
