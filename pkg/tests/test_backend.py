"""Kernel backends: numpy-vs-compiled parity and dispatch."""

import numpy as np
import pytest

from cpfm import backend
from cpfm.backend import pykernels

compiled = pytest.mark.skipif(not backend.HAVE_COMPILED,
                              reason="compiled kernels not built")


@pytest.fixture
def restore_backend():
    previous = backend.active
    yield
    backend.active = previous


def test_python_backend_always_available():
    assert "python" in backend._BACKENDS


def test_use_unknown_backend_rejected():
    with pytest.raises(ValueError):
        backend.use("fortran")


@compiled
class TestParity:
    def _ck(self):
        return backend._BACKENDS["compiled"]

    def test_matmul(self, rng):
        a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 9))
        np.testing.assert_allclose(self._ck().matmul(a, b),
                                   pykernels.matmul(a, b), atol=1e-12)

    def test_bmm(self, rng):
        a, b = rng.normal(size=(4, 6, 5)), rng.normal(size=(4, 5, 3))
        np.testing.assert_allclose(self._ck().bmm(a, b),
                                   pykernels.bmm(a, b), atol=1e-12)

    def test_bmm_noncontiguous_operand(self, rng):
        a = rng.normal(size=(4, 5, 6)).swapaxes(-1, -2)
        b = rng.normal(size=(4, 5, 3))
        np.testing.assert_allclose(self._ck().bmm(a, b),
                                   pykernels.bmm(np.ascontiguousarray(a), b),
                                   atol=1e-12)

    def test_softmax_and_grad(self, rng):
        x = rng.normal(size=(3, 4, 6)) * 4
        y_c = self._ck().softmax_lastaxis(x)
        y_p = pykernels.softmax_lastaxis(x)
        np.testing.assert_allclose(y_c, y_p, atol=1e-13)
        gy = rng.normal(size=x.shape)
        np.testing.assert_allclose(
            self._ck().softmax_lastaxis_grad(y_c, gy),
            pykernels.softmax_lastaxis_grad(y_p, gy), atol=1e-13)

    def test_layernorm_and_grad(self, rng):
        x = rng.normal(size=(5, 8)) * 2 + 1
        xh_c, r_c, a_c = self._ck().layernorm_lastaxis(x, 1e-5)
        xh_p, r_p, a_p = pykernels.layernorm_lastaxis(x, 1e-5)
        np.testing.assert_allclose(xh_c, xh_p, atol=1e-12)
        np.testing.assert_allclose(r_c, r_p, atol=1e-12)
        np.testing.assert_array_equal(a_c, a_p)
        gy = rng.normal(size=x.shape)
        np.testing.assert_allclose(
            self._ck().layernorm_lastaxis_grad(xh_c, r_c, a_c, gy),
            pykernels.layernorm_lastaxis_grad(xh_p, r_p, a_p, gy), atol=1e-12)

    def test_layernorm_guard_row(self):
        x = np.array([[2.0, 2.0, 2.0]])
        xh, rstd, active = self._ck().layernorm_lastaxis(x, 1e-5)
        np.testing.assert_allclose(xh, 0.0, atol=1e-12)
        assert active[0, 0] == 0.0 and rstd[0, 0] == pytest.approx(1e5)


@compiled
def test_swapping_backend_changes_engine_path(rng, restore_backend):
    from cpfm.autodiff import Tensor, matmul
    a, b = rng.normal(size=(6, 4)), rng.normal(size=(4, 3))
    backend.use("python")
    out_py = matmul(Tensor(a), Tensor(b)).data
    backend.use("compiled")
    out_cy = matmul(Tensor(a), Tensor(b)).data
    np.testing.assert_allclose(out_py, out_cy, atol=1e-12)
