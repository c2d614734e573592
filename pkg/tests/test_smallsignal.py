import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from droopstab import netmodel as nm
from droopstab import smallsignal as ss
from droopstab.errors import DimensionMismatch


@pytest.fixture(scope="module")
def ring5_adm():
    return nm.build_admittance(nm.ring5())


def direct_residual(coefs, lam):
    """sigma_min(P(lam)) / sum ||C_k|| |lam|^k, one eigenvalue at a time."""
    p = sum(c * lam**k for k, c in enumerate(coefs))
    smin = np.linalg.svd(p, compute_uv=False).min()
    return smin / sum(np.linalg.norm(c, 2) * abs(lam) ** k for k, c in enumerate(coefs))


def test_filter_time_constant(ring5_adm):
    pms = ss.assemble(ring5_adm, nm.nominal_droops(nm.ring5()))
    assert pms.t_filt == pytest.approx(1 / 31.41)
    assert pms.t_filt == pytest.approx(0.031837, abs=1e-6)
    assert pms.omega0 == pytest.approx(100 * np.pi)


def test_e_lower_block_zero_and_structure(ring5_adm):
    pms = ss.assemble(ring5_adm, nm.nominal_droops(nm.ring5()))
    n = pms.n
    assert np.all(pms.e_mat[n:, n:] == 0)
    for m in (pms.c_mat, pms.d_mat, pms.e_mat):
        assert np.all(m[:n, n:] == 0) and np.all(m[n:, :n] == 0)


def test_c_block_multiplier(ring5_adm):
    pms = ss.assemble(ring5_adm, nm.nominal_droops(nm.ring5()))
    l_p = 1 / 0.0015
    # (rho^2 + 1) T + 2 rho / w0 with rho = 1, T = 1/31.41, w0 = 100 pi
    assert pms.c_mat[0, 0] / l_p == pytest.approx(0.070041, abs=2e-6)


def test_a_matrix_closed_form(ring5_adm):
    d = nm.DroopSetting.uniform(5, 0.1, 2.0)
    pms = ss.assemble(ring5_adm, d)
    b = ring5_adm.b_mat
    l_q = np.eye(5) * 50.0
    expected = np.block([[-2 * b, -2 * b], [2 * b, 2 * (-b + l_q)]])
    assert np.allclose(pms.a_mat, expected)


def test_dimension_mismatch(ring5_adm):
    with pytest.raises(DimensionMismatch):
        ss.assemble(ring5_adm, nm.DroopSetting.uniform(4, 0.1, 2.0))


def test_scalar_quartic_companion():
    m = ss.companion([24, 50, 35, 10, 1])
    assert np.allclose(m[-1], [-24, -50, -35, -10])
    spec = ss.eig(m)
    assert np.allclose(np.sort(spec.eigenvalues.real), [-4, -3, -2, -1], atol=1e-8)
    assert np.abs(spec.eigenvalues.imag).max() < 1e-8


def test_cubic_companion_shape():
    m = ss.companion([6, 11, 6, 1])
    assert m.shape == (3, 3)
    assert np.allclose(np.sort(ss.eig(m).eigenvalues.real), [-3, -2, -1])


def test_imaginary_pair():
    m = np.zeros((3, 3))
    m[:2, :2] = ss.companion([1, 0, 1])
    m[2, 2] = -1.0
    lam = ss.eig(m).eigenvalues
    assert np.min(np.abs(lam - 1j)) < 1e-10
    assert np.min(np.abs(lam + 1j)) < 1e-10


def test_linearization_spectrum_residuals(ring5_adm):
    pms = ss.assemble(ring5_adm, nm.nominal_droops(nm.ring5()))
    comp = ss.linearize(pms)
    assert comp.shape == (35, 35)
    spec = ss.eig(comp, pms)
    assert len(spec) == 35
    independent = [direct_residual(pms.coefficients, lam) for lam in spec.eigenvalues]
    assert max(independent) <= 1e-8
    assert np.allclose(spec.residuals, independent, rtol=1e-6, atol=1e-18)


def test_structural_zero(ring5_adm):
    spec = ss.spectrum_of(ring5_adm, nm.nominal_droops(nm.ring5()))
    assert np.sum(np.abs(spec.eigenvalues) < 1e-6) == 1
    # B 1 = 0 makes [1; 0] a null vector of A
    pms = ss.assemble(ring5_adm, nm.nominal_droops(nm.ring5()))
    assert np.abs(pms.a_mat @ np.r_[np.ones(5), np.zeros(5)]).max() < 1e-9


@pytest.mark.parametrize(
    "eigs, stable, zeros",
    [
        ([0, -3 + 7j, -3 - 7j, -0.2], True, 1),
        ([0, 0.01, -5], False, 1),
        ([0, 0, -1], False, 2),
        ([1j, -1j, -2], False, 0),
    ],
)
def test_classify_rule(eigs, stable, zeros):
    v = ss.classify(np.array(eigs, dtype=complex))
    assert v.stable is stable
    assert v.n_zero_modes == zeros


def test_classify_reports_max_real():
    v = ss.classify(np.array([0, -3 + 7j, -3 - 7j, -0.2]))
    assert v.max_real_nonzero == pytest.approx(-0.2)


def test_section_d_point_stability(ring5_adm):
    inside = nm.DroopSetting(np.r_[0.2, [0.1] * 4], np.r_[1.0, [2.0] * 4])
    outside = nm.DroopSetting(np.r_[0.2, [0.1] * 4], np.r_[3.5, [2.0] * 4])
    assert ss.verdict(ring5_adm, inside).stable
    assert not ss.verdict(ring5_adm, outside).stable


droop_vectors = st.tuples(
    st.lists(st.floats(0.01, 0.5), min_size=5, max_size=5),
    st.lists(st.floats(0.1, 5.0), min_size=5, max_size=5),
)


@settings(max_examples=25, deadline=None)
@given(droop_vectors)
def test_conjugate_closure_and_zero_mode(kfkv):
    adm = nm.build_admittance(nm.ring5())
    spec = ss.spectrum_of(adm, nm.DroopSetting(np.array(kfkv[0]), np.array(kfkv[1])))
    lam = spec.eigenvalues
    for z in lam[np.abs(lam.imag) > 1e-9]:
        assert np.min(np.abs(lam - np.conj(z))) < 1e-6 * (1 + abs(z))
    assert ss.classify(spec).n_zero_modes == 1


def test_continuity_in_filter_time_constant(ring5_adm):
    d = nm.DroopSetting(np.r_[0.2, [0.1] * 4], np.r_[1.0, [2.0] * 4])
    base = ss.verdict(ring5_adm, d).max_real_nonzero
    for factor in (0.99, 1.01):
        d2 = nm.DroopSetting(d.k_f_pct, d.k_v_pct, omega_c=31.41 * factor)
        moved = ss.verdict(ring5_adm, d2).max_real_nonzero
        assert abs(moved - base) < 0.05 * abs(base) + 1e-3
