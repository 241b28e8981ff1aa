"""Laplacian eigenbases and the spectral-domain filtering layers.

The eigensolver is a cyclic Jacobi sweep: rotations are applied in a
fixed (p, q) order until the off-diagonal Frobenius norm drops below
1e-12, which keeps runs bit-reproducible and is plenty fast for the
couple dozen nodes a scene can hold. Eigenpairs are reported with
non-increasing eigenvalues, and each eigenvector is sign-fixed so its
first component larger than 1e-12 in magnitude is positive.

When the input matrix participates in differentiation, the backward
pass uses the analytic differential of a symmetric eigendecomposition.
Inverse eigengap factors are broadened to g / (g*g + eps_eig) so the
gradient stays bounded when eigenvalues collide; the broadening bias is
negligible once gaps are comfortably larger than sqrt(eps_eig).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CapacityError, ContractError, NumericError, ShapeError
from .tensor import DiffTensor

OFF_DIAGONAL_TOL = 1e-12
MAX_SWEEPS = 50
SIGN_TOL = 1e-12
DEFAULT_EPS_EIG = 1e-8
SYMMETRY_TOL = 1e-10


@dataclass
class SpectralBasis:
    """Eigenbasis of one graph Laplacian.

    u holds eigenvectors as columns, lambdas the matching eigenvalues in
    non-increasing order. Both are DiffTensors; they carry gradient only
    when the Laplacian they came from did.
    """

    u: DiffTensor
    lambdas: DiffTensor

    @property
    def n(self) -> int:
        return self.u.shape[0]


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt((off * off).sum()))


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors of a symmetric matrix, pure numpy.

    Returns (lambdas, u) already sorted non-increasing and sign-fixed.
    Raises NumericError if the off-diagonal norm has not fallen below
    the convergence threshold after max_sweeps full sweeps.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigensolver needs a square matrix, got {a.shape}")
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    converged = _off_norm(a) < OFF_DIAGONAL_TOL
    for _ in range(max_sweeps):
        if converged:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # rotation angle via the stable Golub-Van Loan recurrence
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        converged = _off_norm(a) < OFF_DIAGONAL_TOL
    if not converged:
        raise NumericError(
            f"Jacobi sweep did not converge in {max_sweeps} sweeps "
            f"(off-diagonal norm {_off_norm(a):.3e})")
    lam = a.diagonal().copy()
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    for j in range(n):
        col = v[:, j]
        big = np.nonzero(np.abs(col) > SIGN_TOL)[0]
        if big.size and col[big[0]] < 0:
            v[:, j] = -col
    return lam, v


def eigh_sym(matrix: DiffTensor | np.ndarray, *, eps_eig: float = DEFAULT_EPS_EIG,
             max_sweeps: int = MAX_SWEEPS, differentiate: bool = True) -> SpectralBasis:
    """Differentiable symmetric eigendecomposition.

    The input must be symmetric within 1e-10 elementwise. When it is a
    DiffTensor that requires grad (and differentiate is left on), the
    returned basis participates in backward via the broadened analytic
    differential; otherwise both outputs are constants.
    """
    data = matrix.data if isinstance(matrix, DiffTensor) else np.asarray(matrix, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise ShapeError(f"eigh_sym needs a square matrix, got {data.shape}")
    asym = float(np.max(np.abs(data - data.T))) if data.size else 0.0
    if asym > SYMMETRY_TOL:
        raise ContractError(f"eigh_sym input is asymmetric by {asym:.3e}")
    sym = (data + data.T) / 2.0
    lam, u = jacobi_eigh(sym, max_sweeps=max_sweeps)

    wants_grad = (differentiate and isinstance(matrix, DiffTensor)
                  and matrix.requires_grad and T.grad_enabled())
    if not wants_grad:
        return SpectralBasis(u=T.constant(u), lambdas=T.constant(lam))

    gaps = lam[None, :] - lam[:, None]          # gaps[j, i] = lam_i - lam_j
    widen = gaps / (gaps * gaps + eps_eig)
    np.fill_diagonal(widen, 0.0)

    def bw(g_u: np.ndarray, g_lam: np.ndarray):
        coeff = u.T @ g_u
        inner = np.diag(g_lam) + widen * coeff
        grad = u @ inner @ u.T
        return ((grad + grad.T) / 2.0,)

    u_t, lam_t = T.custom_op("eigh_sym", (matrix,), (u, lam), bw)
    return SpectralBasis(u=u_t, lambdas=lam_t)


# ---------------------------------------------------------------------------
# graph Fourier transforms

def _check_gft_shapes(op: str, signal: DiffTensor, u: DiffTensor) -> None:
    if signal.ndim != 3:
        raise ShapeError(f"{op} signal must be [T, N, C], got {signal.shape}")
    if u.ndim not in (2, 3) or u.shape[-1] != u.shape[-2]:
        raise ShapeError(f"{op} basis must be [N, N] or [T, N, N], got {u.shape}")
    if u.shape[-1] != signal.shape[1]:
        raise ShapeError(f"{op}: basis {u.shape} does not match signal {signal.shape}")
    if u.ndim == 3 and u.shape[0] != signal.shape[0]:
        raise ShapeError(f"{op}: basis stack {u.shape} does not match horizon of {signal.shape}")


def gft(signal: DiffTensor, u: DiffTensor) -> DiffTensor:
    """Project a [T, N, C] signal onto eigenmode coefficients, per step.

    u is either one shared basis [N, N] or a stack [T, N, N] holding the
    basis of each timestep.
    """
    signal, u = T.as_tensor(signal), T.as_tensor(u)
    _check_gft_shapes("gft", signal, u)
    axes = (1, 0) if u.ndim == 2 else (0, 2, 1)
    return T.matmul(T.transpose(u, axes), signal)


def igft(coeffs: DiffTensor, u: DiffTensor) -> DiffTensor:
    """Map eigenmode coefficients back to node space, inverse of gft."""
    coeffs, u = T.as_tensor(coeffs), T.as_tensor(u)
    _check_gft_shapes("igft", coeffs, u)
    return T.matmul(u, coeffs)


# ---------------------------------------------------------------------------
# filtering layers

def slice_mode_kernel(theta: DiffTensor, n: int) -> DiffTensor:
    """Cut the learned per-mode kernel down to the scene's node count.

    theta is allocated once at [T, n_max, c_in, c_out]; scenes use its
    first n mode rows. Scenes larger than the allocation are a capacity
    problem, not a shape bug, hence the dedicated error.
    """
    n_max = theta.shape[1]
    if n > n_max:
        raise CapacityError(
            f"scene has {n} agents but the mode kernel was allocated for "
            f"n_max={n_max}; re-run with a larger n_max")
    if n == n_max:
        return theta
    return theta[:, :n]


def sgconv(coeffs: DiffTensor, theta: DiffTensor, lambdas: DiffTensor) -> DiffTensor:
    """Spectral graph filter: learned per-mode, per-channel scaling.

    For each timestep t and output channel k the filter forms
    sum_i sum_j theta[t, i, j, k] * lambda_i * coeffs[t, i, j]; the
    summed response is shared by every output mode of that timestep.
    theta must already be sliced to the live mode count; lambdas is
    [N] for a static basis or [T, N] for per-step bases.
    """
    coeffs, theta, lambdas = (T.as_tensor(x) for x in (coeffs, theta, lambdas))
    t_len, n, c_in = coeffs.shape
    if theta.ndim != 4 or theta.shape[0] != t_len or theta.shape[1] != n or theta.shape[2] != c_in:
        raise ShapeError(
            f"sgconv kernel {theta.shape} does not match coefficients {coeffs.shape}")
    if lambdas.shape not in ((n,), (t_len, n)):
        raise ShapeError(
            f"sgconv eigenvalues {lambdas.shape} do not match coefficients {coeffs.shape}")
    c_out = theta.shape[3]
    lam_col = T.reshape(lambdas, (1, n, 1) if lambdas.ndim == 1 else (t_len, n, 1))
    scaled = T.mul(coeffs, lam_col)
    weighted = T.mul(theta, T.reshape(scaled, (t_len, n, c_in, 1)))
    pooled = T.sum_(weighted, axis=(1, 2))
    return T.broadcast_to(T.reshape(pooled, (t_len, 1, c_out)), (t_len, n, c_out))


def tgconv(coeffs: DiffTensor, signal_kernel: DiffTensor, signal_bias: DiffTensor,
           gate_kernel: DiffTensor, gate_bias: DiffTensor) -> DiffTensor:
    """Gated temporal convolution applied to spectral coefficients.

    Both branches are same-padded convolutions along the time axis; the
    gate branch is squashed through a sigmoid and multiplies the signal
    branch elementwise, so a strongly negative gate bias shuts the
    output off and a zero gate pre-activation halves the signal.
    """
    signal = T.add(T.conv_time(coeffs, signal_kernel), signal_bias)
    gate = T.add(T.conv_time(coeffs, gate_kernel), gate_bias)
    return T.mul(signal, T.sigmoid(gate))


@dataclass
class SpectralBlockParams:
    """Learned pieces of one graph branch inside a unit."""

    theta: DiffTensor           # [T, n_max, c_in, c_out]
    tg_signal_w: DiffTensor     # [1, L, c_in, c_out]
    tg_signal_b: DiffTensor     # [c_out]
    tg_gate_w: DiffTensor
    tg_gate_b: DiffTensor


def block_forward(signal: DiffTensor, basis_u: DiffTensor, basis_lam: DiffTensor,
                  params: SpectralBlockParams, use_tgconv: bool) -> DiffTensor:
    """Filter a node signal through one graph branch.

    Projects onto the eigenbasis, applies the spectral filter plus,
    when enabled, the gated temporal convolution, and projects back.
    """
    coeffs = gft(signal, basis_u)
    n = signal.shape[1]
    mixed = sgconv(coeffs, slice_mode_kernel(params.theta, n), basis_lam)
    if use_tgconv:
        mixed = T.add(mixed, tgconv(coeffs, params.tg_signal_w, params.tg_signal_b,
                                    params.tg_gate_w, params.tg_gate_b))
    return igft(mixed, basis_u)


def unit_forward(signal: DiffTensor, agent_u: DiffTensor, agent_lam: DiffTensor,
                 agent_params: SpectralBlockParams,
                 env_basis: SpectralBasis | None,
                 env_params: SpectralBlockParams | None,
                 use_tgconv: bool) -> DiffTensor:
    """One dual-graph unit: agent branch plus optional map branch.

    The agent branch uses the per-timestep bases stacked in agent_u and
    agent_lam; the map branch reuses one static basis for every step.
    Branch outputs are summed in node space.
    """
    out = block_forward(signal, agent_u, agent_lam, agent_params, use_tgconv)
    if env_params is not None:
        if env_basis is None:
            raise ContractError("map branch parameters supplied without a map basis")
        out = T.add(out, block_forward(signal, env_basis.u, env_basis.lambdas,
                                       env_params, use_tgconv))
    return out
