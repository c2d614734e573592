"""Quartic polynomial eigenvalue problem of the droop-controlled network.

The characteristic equation is

    (A + B s + C s^2 + D s^3 + E s^4) [dtheta; dV] = 0

with 2N x 2N real coefficients.  E has a zero lower-right block, so the
V-rows are only cubic; ``linearize`` exploits this and returns a 7N x 7N
first-order state matrix with no infinite eigenvalues.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoConvergence, SingularLeadingBlock
from .netmodel import AdmittanceModel, DroopSetting, droop_inverse_matrices

RESIDUAL_TOL = 1e-8
ZERO_MODE_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class PolyMatrixSet:
    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    d_mat: np.ndarray
    e_mat: np.ndarray
    n: int
    omega0: float
    t_filt: float

    @property
    def coefficients(self):
        """Coefficient matrices ordered by ascending power of s."""
        return (self.a_mat, self.b_mat, self.c_mat, self.d_mat, self.e_mat)

    def evaluate(self, lam):
        """P(lam) for a scalar or a 1-D array of eigenvalues (stacked)."""
        lam = np.asarray(lam, dtype=complex)
        powers = lam[..., None] ** np.arange(5)
        return np.einsum("...k,kij->...ij", powers, np.stack(self.coefficients))


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    residuals: np.ndarray

    def __len__(self):
        return self.eigenvalues.size


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    max_real_nonzero: float
    n_zero_modes: int


def assemble(adm: AdmittanceModel, droops: DroopSetting) -> PolyMatrixSet:
    n = adm.n
    if droops.n != n:
        raise DimensionMismatch(f"admittance has {n} nodes but droop setting has {droops.n} sources")
    l_p, l_q = droop_inverse_matrices(droops)
    b = adm.b_mat
    rho = adm.rho
    r1 = rho**2 + 1.0
    w0 = 2.0 * np.pi * droops.f0
    t = 1.0 / droops.omega_c
    z = np.zeros((n, n))

    c_theta = r1 * t + 2.0 * rho / w0
    d_theta = 1.0 / w0**2 + 2.0 * rho * t / w0
    e_theta = t / w0**2

    a_mat = np.block([[-r1 * b, -rho * r1 * b], [rho * r1 * b, r1 * (-b + l_q)]])
    b_mat = np.block([[r1 * l_p, -r1 * b / w0], [r1 * b / w0, c_theta * l_q]])
    c_mat = np.block([[c_theta * l_p, z], [z, d_theta * l_q]])
    d_mat = np.block([[d_theta * l_p, z], [z, e_theta * l_q]])
    e_mat = np.block([[e_theta * l_p, z], [z, z]])
    return PolyMatrixSet(a_mat, b_mat, c_mat, d_mat, e_mat, n, w0, t)


def _solve_leading(block, rhs, name):
    if not np.all(np.isfinite(block)):
        raise SingularLeadingBlock(f"{name} block has non-finite entries")
    try:
        out = np.linalg.solve(block, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularLeadingBlock(f"{name} block is singular") from exc
    if not np.all(np.isfinite(out)):
        raise SingularLeadingBlock(f"{name} block is numerically singular")
    return out


def linearize(pms: PolyMatrixSet) -> np.ndarray:
    """First-order state matrix over [th, th', th'', th''', V, V', V'']."""
    n = pms.n
    th, v = slice(0, n), slice(n, 2 * n)
    a, b, c, d, e = pms.coefficients
    blk = lambda k: slice(k * n, (k + 1) * n)

    m = np.zeros((7 * n, 7 * n))
    eye = np.eye(n)
    for k in (0, 1, 2, 4, 5):
        m[blk(k), blk(k + 1)] = eye

    # theta rows: E_tt th'''' = -(A_tt th + A_tv V + B_tt th' + B_tv V' + C_tt th'' + D_tt th''')
    rhs = np.hstack([a[th, th], b[th, th], c[th, th], d[th, th], a[th, v], b[th, v], c[th, v]])
    m[blk(3), :] = -_solve_leading(e[th, th], rhs, "quartic theta")
    # V rows: D_vv V''' = -(A_vt th + B_vt th' + C_vt th'' + D_vt th''' + A_vv V + B_vv V' + C_vv V'')
    rhs = np.hstack([a[v, th], b[v, th], c[v, th], d[v, th], a[v, v], b[v, v], c[v, v]])
    m[blk(6), :] = -_solve_leading(d[v, v], rhs, "cubic voltage")
    return m


def companion(coeffs) -> np.ndarray:
    """Companion matrix of a scalar polynomial given ascending coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    deg = coeffs.size - 1
    if deg < 1 or coeffs[-1] == 0:
        raise SingularLeadingBlock("leading coefficient must be non-zero")
    m = np.zeros((deg, deg))
    m[:-1, 1:] = np.eye(deg - 1)
    m[-1, :] = -coeffs[:-1] / coeffs[-1]
    return m


def backward_errors(coefficients, eigenvalues) -> np.ndarray:
    """Normwise backward error of each eigenvalue for sum_k coef[k] s^k."""
    lam = np.asarray(eigenvalues, dtype=complex)
    if lam.size == 0:
        return np.zeros(0)
    stack = np.stack([np.asarray(c, dtype=float) for c in coefficients])
    powers = lam[:, None] ** np.arange(stack.shape[0])
    p = np.einsum("ek,kij->eij", powers, stack)
    sigma_min = np.linalg.svd(p, compute_uv=False)[:, -1]
    norms = np.linalg.norm(stack, ord=2, axis=(1, 2))
    scale = np.abs(powers) @ norms
    return sigma_min / scale


def eig(companion_matrix, poly=None, check=True) -> Spectrum:
    """Eigenvalues of a real matrix, annotated with polynomial backward errors.

    ``poly`` is the polynomial the matrix linearizes (a ``PolyMatrixSet`` or
    a sequence of ascending coefficient matrices).  Without it the residual
    refers to the plain eigenproblem of the matrix itself.
    """
    m = np.asarray(companion_matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionMismatch("matrix has non-finite entries")
    try:
        lam = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"QR iteration did not converge: {exc}") from exc

    if poly is None:
        coefficients = (-m, np.eye(m.shape[0]))
    elif isinstance(poly, PolyMatrixSet):
        coefficients = poly.coefficients
    else:
        coefficients = tuple(poly)
    res = backward_errors(coefficients, lam)
    if check and res.size and res.max() > RESIDUAL_TOL:
        worst = int(np.argmax(res))
        raise NoConvergence(
            f"eigenvalue {lam[worst]:.6g} has backward error {res[worst]:.3g} > {RESIDUAL_TOL:g}"
        )
    return Spectrum(lam, res)


def classify(spec) -> StabilityVerdict:
    lam = np.asarray(getattr(spec, "eigenvalues", spec), dtype=complex)
    if lam.size == 0:
        return StabilityVerdict(False, float("nan"), 0)
    tol = ZERO_MODE_RTOL * (1.0 + np.abs(lam).max())
    zero = np.abs(lam) <= tol
    n_zero = int(zero.sum())
    rest = lam[~zero]
    max_real = float(rest.real.max()) if rest.size else float("nan")
    stable = n_zero <= 1 and rest.size > 0 and max_real < 0.0
    return StabilityVerdict(bool(stable), max_real, n_zero)


def spectrum_of(adm: AdmittanceModel, droops: DroopSetting, check=True) -> Spectrum:
    pms = assemble(adm, droops)
    return eig(linearize(pms), pms, check=check)


def verdict(adm: AdmittanceModel, droops: DroopSetting) -> StabilityVerdict:
    return classify(spectrum_of(adm, droops))
