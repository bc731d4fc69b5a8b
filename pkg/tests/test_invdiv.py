import numpy as np
import pytest

from eulerci.fields import Grid, PeriodicField, curl_arr, div_sym, div_vec, sym_to_full, sym_trace
from eulerci.invdiv import inv_div_tensor, inv_div_tensor_arr, inv_div_vector, tensor_symbol_apply


@pytest.fixture(scope="module")
def X():
    return Grid(32).mesh()


def _noise(comps, seed, kmax=10, n=32):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(comps, n, n, n))
    ah = np.fft.rfftn(a, axes=(-3, -2, -1))
    k = np.fft.fftfreq(n, 1 / n)
    K = np.sqrt(k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :n // 2 + 1] ** 2)
    ah[..., K > kmax] = 0
    return np.fft.irfftn(ah, s=(n,) * 3, axes=(-3, -2, -1))


def test_zero_in_zero_out():
    assert not np.any(inv_div_tensor_arr(np.zeros((3, 16, 16, 16))))


def test_single_mode(X):
    f = np.stack([np.sin(X[2]), -np.cos(X[2]), 0 * X[0]])
    S = inv_div_tensor(PeriodicField(f))
    assert S.rank == "symtensor3"
    assert np.abs(div_sym(S.values) - f).max() < 1e-14


def test_symbol_mode_by_mode():
    # oracle: i k_j R_ij(k) = f_i for a handful of explicit modes
    rng = np.random.default_rng(3)
    for k in [(1, 0, 0), (0, 2, -1), (3, 1, 2), (-2, 5, 1)]:
        k = np.array(k, float)
        f = rng.normal(size=3) + 1j * rng.normal(size=3)
        kk = k @ k
        kf = k @ f
        R = (1j / kk) * (-(np.outer(k, f) + np.outer(f, k)) + 0.5 * kf * np.eye(3)
                         + 0.5 * kf * np.outer(k, k) / kk)
        assert np.allclose(1j * R @ k, f, atol=1e-14)
        assert abs(np.trace(R)) < 1e-14


def test_div_is_identity_minus_mean():
    f = _noise(3, 0) + np.array([1.0, -2.0, 0.5])[:, None, None, None]
    S = inv_div_tensor_arr(f)
    ff = f - f.mean(axis=(1, 2, 3), keepdims=True)
    assert np.abs(div_sym(S) - ff).max() <= 1e-10 * np.abs(ff).max()


def test_symmetric_and_trace_free_on_solenoidal():
    g = curl_arr(_noise(3, 1))
    T = inv_div_tensor_arr(g)
    full = sym_to_full(T)
    assert np.array_equal(full, full.transpose(1, 0, 2, 3, 4))
    assert np.abs(sym_trace(T)).max() <= 1e-13 * np.abs(T).max()


def test_boundedness_diagnostic():
    f = _noise(3, 2)
    assert np.abs(inv_div_tensor_arr(f)).max() <= 5 * np.abs(f).max()


def test_vector_version(X):
    g = np.cos(X[0])
    out = inv_div_vector(PeriodicField(g)).values
    # d/dx1 sin x1 = cos x1, so the first component is +sin x1
    assert np.abs(out[0] - np.sin(X[0])).max() < 1e-14
    assert np.abs(out[1:]).max() < 1e-15
    assert np.abs(div_vec(out) - g).max() < 1e-14


def test_vector_version_ignores_constants(X):
    g = _noise(1, 4)[0]
    a = inv_div_vector(PeriodicField(g)).values
    b = inv_div_vector(PeriodicField(g + 7.0)).values
    assert np.abs(a - b).max() < 1e-14
    assert not np.any(inv_div_vector(PeriodicField(np.full((16,) * 3, 3.0))).values)


def test_tensor_symbol_apply_matches_array_version():
    f = _noise(3, 5, n=16, kmax=5)
    from eulerci.fields import fft, ifft
    direct = ifft(tensor_symbol_apply(fft(f), 16), 16)
    assert np.allclose(direct, inv_div_tensor_arr(f), atol=1e-14)
