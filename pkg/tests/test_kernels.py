import json
import os
import subprocess
import sys

import numpy as np
import pytest

from nbbr import _kernels_numpy as npk
from nbbr._accel import HAS_NUMBA

numba_only = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")

MEANS = np.array([1e-9, 0.3, 1.0, 2.0, 7.5, 30.0, 250.0])


@numba_only
@pytest.mark.parametrize("kappa", [0.05, 0.5, 1.0, 3.0])
def test_series_parity(kappa):
    from nbbr import _kernels_numba as nbk

    a, ta = nbk.series_expectations(MEANS, kappa, 1e-12, 100_000)
    b, tb = npk.series_expectations(MEANS, kappa, 1e-12, 100_000)
    assert np.array_equal(ta, tb)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-300)


@numba_only
@pytest.mark.parametrize("mu, kappa", [(1.0, 1.0), (2.0, 0.25), (40.0, 0.1), (1597.8, 0.5214)])
def test_tail_parity(mu, kappa):
    from nbbr import _kernels_numba as nbk

    a = nbk.tail_probabilities(mu, kappa, 1e-12, 100_000)
    b = npk.tail_probabilities(mu, kappa, 1e-12, 100_000)
    assert a.shape == b.shape
    assert np.allclose(a, b, rtol=1e-11, atol=0)


@numba_only
def test_truncation_flag_parity():
    from nbbr import _kernels_numba as nbk

    _, ta = nbk.series_expectations(np.array([1e4]), 5.0, 1e-12, 50)
    _, tb = npk.series_expectations(np.array([1e4]), 5.0, 1e-12, 50)
    assert ta[0] == tb[0] == -1
    assert nbk.tail_probabilities(1e4, 5.0, 1e-12, 50).size == 0
    assert npk.tail_probabilities(1e4, 5.0, 1e-12, 50).size == 0


@numba_only
def test_data_sums_parity():
    from nbbr import _kernels_numba as nbk

    y = np.array([0, 1, 5, 17, 300], dtype=np.int64)
    for got, want in zip(nbk.data_sums(y, 0.7), npk.data_sums(y, 0.7)):
        assert np.allclose(got, want, rtol=1e-13, atol=0)


def _backend_in_subprocess(flag):
    env = dict(os.environ)
    if flag is None:
        env.pop("NBBR_DISABLE_JIT", None)
    else:
        env["NBBR_DISABLE_JIT"] = flag
    code = (
        "import nbbr, json;"
        "from nbbr.data import salmonella_spec;"
        "r = nbbr.fit(salmonella_spec(), method='median_br');"
        "print(json.dumps([nbbr.BACKEND, r.kappa]))"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_env_flag_selects_numpy():
    backend, kappa = _backend_in_subprocess("1")
    assert backend == "numpy"
    assert kappa == pytest.approx(0.06922, abs=1e-4)


@numba_only
def test_default_backend_and_agreement():
    backend, kappa = _backend_in_subprocess(None)
    assert backend == "numba"
    _, kappa_np = _backend_in_subprocess("1")
    assert kappa == pytest.approx(kappa_np, rel=1e-10)


@pytest.mark.parametrize("value, disabled", [("", False), ("0", False), ("off", False), ("1", True), ("yes", True)])
def test_flag_parsing(monkeypatch, value, disabled):
    from nbbr._accel import jit_disabled

    monkeypatch.setenv("NBBR_DISABLE_JIT", value)
    assert jit_disabled() is disabled
