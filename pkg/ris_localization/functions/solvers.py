"""
Sparse recovery for the two sounding stages.

Stage 1 uses simultaneous orthogonal matching pursuit across subcarriers (dcs_somp). Stage 2 solves the multiple
measurement vector problem Y = Psi H + Z with group-sparse rows of H, either jointly (gsbl, tmsbl, amp_mmv,
somp_mmv) or one subcarrier at a time (sbl_smv, omp).
"""
import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ris_localization.functions.beamspace import KroneckerOperator, grid_to_angle
from ris_localization.functions.errors import IllPosedProblemError, ResidualCollapseError, ShapeMismatchError

logger = logging.getLogger('ris_localization')

COLLAPSE_TOLERANCE = 1e-12
CONDITION_LIMIT = 1e14
CHOLESKY_JITTER = 1e-12
PRUNE_THRESHOLD = 1e-10

# Printed leading-order costs at (N_R, N, J) = (8, 10, 60). The GSBL entry does not follow from its own formula,
# which gives 728000.
PRINTED_COMPLEXITY = {'dcs_somp': 216640, 'sbl': 2165120, 'gsbl': 5336000, 'tmsbl': 224512, 'amp': 4800}
PRINTED_DIMENSIONS = (8, 10, 60)

SompResult = namedtuple('SompResult', ['indices', 'bs_indices', 'ue_indices', 'bs_angles', 'ue_angles',
                                       'residual_norm'])


@dataclass(frozen=True)
class MmvProblem:
    """
    Stage-2 recovery problem Y = Psi H + Z.

    observations: (J, N) stacked observations of the dominant path pair
    sensing: (J, N_R) matrix Psi
    noise_cov_diag: (J,) noise variance of each block after combining
    """
    observations: np.ndarray
    sensing: np.ndarray
    noise_cov_diag: np.ndarray
    max_iterations: int = 100
    convergence_tol: float = 1e-6

    def __post_init__(self):
        observations = np.atleast_2d(np.asarray(self.observations, dtype=complex))
        sensing = np.atleast_2d(np.asarray(self.sensing, dtype=complex))
        noise = np.broadcast_to(np.asarray(self.noise_cov_diag, dtype=float), (observations.shape[0],)).copy()
        if sensing.shape[0] != observations.shape[0]:
            raise ShapeMismatchError(
                f'{observations.shape[0]} observation rows but sensing matrix has shape {sensing.shape}')
        if np.any(noise <= 0):
            raise IllPosedProblemError('noise covariance entries must be positive')
        object.__setattr__(self, 'observations', observations)
        object.__setattr__(self, 'sensing', sensing)
        object.__setattr__(self, 'noise_cov_diag', noise)

    @property
    def n_blocks(self):
        return self.observations.shape[0]

    @property
    def n_subcarriers(self):
        return self.observations.shape[1]

    @property
    def n_grid(self):
        return self.sensing.shape[1]


@dataclass
class SparseEstimate:
    channel_matrix: np.ndarray
    hyperparameters: np.ndarray
    correlation: np.ndarray
    iterations_used: int
    converged: bool
    flop_estimate: int
    solver: str = ''
    residual_history: tuple = ()

    def row_energy(self):
        return np.sum(np.abs(self.channel_matrix) ** 2, axis=1)

    def dominant_row(self):
        """Row with the largest energy across subcarriers, lowest index on ties"""
        return int(np.argmax(self.row_energy()))


def flop_estimate(algorithm, n_ris, n_subcarriers, n_blocks):
    """
    Leading-order operation count of a recovery algorithm.

    Parameters
    ----------
    algorithm: str
        dcs_somp, sbl, gsbl, tmsbl, amp or omp
    n_ris: int
        RIS grid size N_R
    n_subcarriers: int
        N
    n_blocks: int
        J

    Returns
    -------
    int
    """
    nr, n, j = int(n_ris), int(n_subcarriers), int(n_blocks)
    formulas = {
        'dcs_somp': n * nr ** 2 + j ** 3,
        'sbl': n * nr ** 3 + n * j ** 3,
        'gsbl': n ** 3 * nr ** 3 + j ** 3,
        'tmsbl': nr ** 3 + j ** 3 + nr * n ** 3,
        'amp': nr * n * j,
        'omp': nr * n * j,
    }
    if algorithm not in formulas:
        raise ValueError(f'No complexity formula for {algorithm}, options are {list(formulas)}')
    return formulas[algorithm]


def _as_operator(operator):
    operator = getattr(operator, 'combined', operator)
    if isinstance(operator, KroneckerOperator):
        return operator
    return KroneckerOperator(np.atleast_2d(operator), np.ones((1, 1)))


def _simultaneous_pursuit(observations, operators, n_atoms):
    """
    Greedy atom selection shared by all observation vectors, each with its own operator.

    The score of atom i is sum_n |s_i[n]^H r[n]| / ||s_i[n]||. Selected atoms are orthogonalised against the previous
    ones (Gram-Schmidt) before the residuals are deflated.
    """
    residuals = [np.array(y, dtype=complex).ravel() for y in observations]
    initial_norms = [np.linalg.norm(r) for r in residuals]
    column_norms = [op.column_norms() for op in operators]
    bases = [[] for _ in operators]
    indices = []
    for _ in range(n_atoms):
        if all(np.linalg.norm(r) <= COLLAPSE_TOLERANCE * y0 for r, y0 in zip(residuals, initial_norms)):
            raise ResidualCollapseError(
                f'residual vanished after {len(indices)} atoms, cannot select {n_atoms}')
        score = np.zeros(operators[0].shape[1])
        for op, r, norms in zip(operators, residuals, column_norms):
            score += np.abs(op.rmatvec(r)) / np.where(norms > 0, norms, np.inf)
        score[indices] = -np.inf
        index = int(np.argmax(score))
        indices.append(index)
        for n, op in enumerate(operators):
            rho = op.column(index).astype(complex)
            for previous in bases[n]:
                rho = rho - (previous.conj() @ rho) / (previous.conj() @ previous) * previous
            energy = np.real(rho.conj() @ rho)
            if energy <= COLLAPSE_TOLERANCE ** 2 * np.real(op.column(index).conj() @ op.column(index)):
                continue
            bases[n].append(rho)
            residuals[n] = residuals[n] - (rho.conj() @ residuals[n]) / energy * rho
    return indices, residuals


def dcs_somp(observations, operators, n_paths, spacing_ratio=0.5):
    """
    Pick the beamspace atoms shared by all subcarriers of the Stage-1 sounding.

    Parameters
    ----------
    observations: list of np.ndarray
        Column-stacked observation vec(Y[n]) of every subcarrier
    operators: list of SensingOperator or KroneckerOperator
        Combined Stage-1 operator S[n] of every subcarrier
    n_paths: int
        Number of atoms to select
    spacing_ratio: float
        Element spacing over wavelength, used to turn grid indices into angles

    Returns
    -------
    SompResult
        Selected atom indices in selection order, their split into BS and UE grid indices, the corresponding grid
        angles and the largest relative residual norm
    """
    operators = [_as_operator(op) for op in operators]
    if len(observations) != len(operators):
        raise ShapeMismatchError(f'{len(observations)} observations for {len(operators)} operators')
    if n_paths > operators[0].shape[1]:
        raise ResidualCollapseError(f'cannot select {n_paths} atoms from {operators[0].shape[1]} columns')
    n_bs, n_ue = operators[0].left.shape[1], operators[0].right.shape[1]
    indices, residuals = _simultaneous_pursuit(observations, operators, n_paths)
    bs_indices = [i // n_ue for i in indices]
    ue_indices = [i % n_ue for i in indices]
    residual_norm = max(np.linalg.norm(r) / max(np.linalg.norm(y), np.finfo(float).tiny)
                        for r, y in zip(residuals, observations))
    logger.debug(f'DCS-SOMP atoms {indices}, relative residual {residual_norm:.3g}')
    return SompResult(
        indices=indices, bs_indices=bs_indices, ue_indices=ue_indices,
        bs_angles=[grid_to_angle(i, n_bs, spacing_ratio) for i in bs_indices],
        ue_angles=[grid_to_angle(i, n_ue, spacing_ratio) for i in ue_indices],
        residual_norm=residual_norm)


def omp(y, A, n_atoms=1):
    """
    Orthogonal matching pursuit with a least-squares refit on the selected atoms.

    Returns
    -------
    indices: list of int
    coefficients: np.ndarray
        Least-squares coefficients of the selected atoms, in selection order
    """
    A = np.atleast_2d(A)
    indices, _ = _simultaneous_pursuit([y], [_as_operator(A)], n_atoms)
    coefficients = np.linalg.lstsq(A[:, indices], np.asarray(y), rcond=None)[0]
    return indices, coefficients


def _hpd_inverse(matrix):
    """
    Inverse of a Hermitian positive-definite matrix through its Cholesky factor.

    The matrix is equilibrated by its diagonal first. A failed factorisation is retried once with a small diagonal
    jitter; the condition number is estimated from the factor's diagonal.
    """
    matrix = (matrix + matrix.conj().T) / 2
    scale = np.sqrt(np.real(np.diag(matrix)))
    if np.any(~(scale > 0)) or np.any(~np.isfinite(scale)):
        raise IllPosedProblemError('matrix to invert has a non-positive or non-finite diagonal')
    scaled = matrix / np.outer(scale, scale)
    eye = np.eye(matrix.shape[0])
    try:
        factor = cho_factor(scaled, lower=True)
    except LinAlgError:
        try:
            factor = cho_factor(scaled + CHOLESKY_JITTER * eye, lower=True)
        except LinAlgError:
            raise IllPosedProblemError('matrix is not positive definite even with diagonal loading')
    pivots = np.abs(np.diag(factor[0]))
    condition = (pivots.max() / pivots.min()) ** 2 if pivots.min() > 0 else np.inf
    if condition > CONDITION_LIMIT:
        raise IllPosedProblemError(f'estimated condition number {condition:.3g} exceeds {CONDITION_LIMIT:.0e}')
    return cho_solve(factor, eye) / np.outer(scale, scale)


def _posterior(psi, gamma, noise, Y):
    """
    Posterior covariance and mean of the rows of H for a diagonal prior diag(gamma), solved in the smaller of the
    grid and block dimensions.
    """
    n_active, n_blocks = psi.shape[1], psi.shape[0]
    if n_active <= n_blocks:
        weighted = psi.conj().T / noise
        sigma = _hpd_inverse(np.diag(1 / gamma) + weighted @ psi)
        return sigma, sigma @ (weighted @ Y)
    gamma_psi_h = gamma[:, np.newaxis] * psi.conj().T
    c_inv = _hpd_inverse(np.diag(noise) + psi @ gamma_psi_h)
    gain = gamma_psi_h @ c_inv
    return np.diag(gamma) - gain @ gamma_psi_h.conj().T, gain @ Y


def _zero_estimate(problem, solver):
    logger.debug(f'{solver}: all observations are zero, returning the zero estimate')
    return SparseEstimate(
        channel_matrix=np.zeros((problem.n_grid, problem.n_subcarriers), dtype=complex),
        hyperparameters=np.zeros(problem.n_grid), correlation=np.eye(problem.n_subcarriers), iterations_used=0,
        converged=True, flop_estimate=flop_estimate(solver, problem.n_grid, problem.n_subcarriers, problem.n_blocks),
        solver=solver)


def _prune(gamma, active):
    keep = gamma[active] >= PRUNE_THRESHOLD * gamma.max()
    gamma[active[~keep]] = 0
    return active[keep]


def _gamma_change(new, old):
    return np.max(np.abs(new - old)) / max(new.max(), np.finfo(float).tiny)


def gsbl(problem):
    """
    Group sparse Bayesian learning on the vectorised model y = (Psi kron I_N) h + z.

    Each row h_j of H has prior CN(0, gamma_j M) with a correlation matrix M shared across rows. The E-step forms the
    full posterior over all active rows and subcarriers, so the cost grows with (N N_R)^3 and this is meant for
    small instances.

    Parameters
    ----------
    problem: MmvProblem

    Returns
    -------
    SparseEstimate
    """
    Y, psi, noise = problem.observations, problem.sensing, problem.noise_cov_diag
    n_blocks, n_sub = Y.shape
    n_grid = psi.shape[1]
    if not np.any(Y):
        return _zero_estimate(problem, 'gsbl')
    gamma = np.ones(n_grid)
    correlation = np.eye(n_sub, dtype=complex)
    active = np.arange(n_grid)
    H = np.zeros((n_grid, n_sub), dtype=complex)
    converged, iteration = False, 0
    residuals = []
    for iteration in range(1, problem.max_iterations + 1):
        psi_a = psi[:, active]
        n_active = active.size
        m_inv = _hpd_inverse(correlation)
        gram = (psi_a.conj().T / noise) @ psi_a
        precision = np.kron(np.diag(1 / gamma[active]), m_inv) + np.kron(gram, np.eye(n_sub))
        sigma = _hpd_inverse(precision)
        rhs = ((psi_a.conj().T / noise) @ Y).ravel()
        mean = (sigma @ rhs).reshape(n_active, n_sub)
        blocks = np.einsum('iaib->iab', sigma.reshape(n_active, n_sub, n_active, n_sub))
        second_moment = blocks + np.einsum('ia,ib->iab', mean, mean.conj())
        new_gamma = np.zeros(n_grid)
        new_gamma[active] = np.maximum(np.real(np.einsum('ab,iba->i', m_inv, second_moment)) / n_sub, 0)

        correlation = np.mean(second_moment / new_gamma[active][:, np.newaxis, np.newaxis], axis=0)
        correlation = (correlation + correlation.conj().T) / 2
        correlation = correlation * n_sub / np.real(np.trace(correlation)) + 1e-6 * np.eye(n_sub)

        H = np.zeros((n_grid, n_sub), dtype=complex)
        H[active] = mean
        change = _gamma_change(new_gamma, gamma)
        gamma = new_gamma
        active = _prune(gamma, active)
        H[gamma == 0] = 0
        residuals.append(float(np.linalg.norm(Y - psi @ H)))
        if change < problem.convergence_tol:
            converged = True
            break
    logger.debug(f'GSBL stopped after {iteration} iterations, converged={converged}, {active.size} active rows')
    return SparseEstimate(channel_matrix=H, hyperparameters=gamma, correlation=correlation, iterations_used=iteration,
                          converged=converged, flop_estimate=flop_estimate('gsbl', n_grid, n_sub, n_blocks),
                          solver='gsbl', residual_history=tuple(residuals))


def tmsbl(problem, kappa=2.0):
    """
    Low-complexity MMV sparse Bayesian learning.

    The posterior is approximated row-wise with the N_R x N_R covariance (Gamma^-1 + Psi^H R^-1 Psi)^-1 shared by all
    subcarriers, H = Sigma Psi^H R^-1 Y. Hyperparameters are updated as gamma_j = Sigma_jj + h_j^H M^-1 h_j / N and
    the correlation matrix as sum_j h_j h_j^H / gamma_j + kappa I, normalised to unit Frobenius norm.

    Parameters
    ----------
    problem: MmvProblem
    kappa: float
        Diagonal loading of the correlation update

    Returns
    -------
    SparseEstimate
    """
    Y, psi, noise = problem.observations, problem.sensing, problem.noise_cov_diag
    n_blocks, n_sub = Y.shape
    n_grid = psi.shape[1]
    if not np.any(Y):
        return _zero_estimate(problem, 'tmsbl')
    gamma = np.ones(n_grid)
    correlation = np.eye(n_sub, dtype=complex)
    active = np.arange(n_grid)
    H = np.zeros((n_grid, n_sub), dtype=complex)
    converged, iteration = False, 0
    residuals = []
    for iteration in range(1, problem.max_iterations + 1):
        sigma, mean = _posterior(psi[:, active], gamma[active], noise, Y)
        m_inv = _hpd_inverse(correlation)
        quadratic = np.real(np.einsum('in,nm,im->i', mean.conj(), m_inv, mean))
        new_gamma = np.zeros(n_grid)
        new_gamma[active] = np.maximum(np.real(np.diag(sigma)) + quadratic / n_sub, 0)

        weights = np.where(new_gamma[active] > 0, 1 / np.where(new_gamma[active] > 0, new_gamma[active], 1), 0)
        correlation = (mean.T * weights) @ mean.conj() + kappa * np.eye(n_sub)
        correlation = (correlation + correlation.conj().T) / 2
        correlation = correlation / np.linalg.norm(correlation, 'fro')

        H = np.zeros((n_grid, n_sub), dtype=complex)
        H[active] = mean
        change = _gamma_change(new_gamma, gamma)
        gamma = new_gamma
        active = _prune(gamma, active)
        H[gamma == 0] = 0
        residuals.append(float(np.linalg.norm(Y - psi @ H)))
        if change < problem.convergence_tol:
            converged = True
            break
    logger.debug(f'TMSBL stopped after {iteration} iterations, converged={converged}, {active.size} active rows')
    return SparseEstimate(channel_matrix=H, hyperparameters=gamma, correlation=correlation, iterations_used=iteration,
                          converged=converged, flop_estimate=flop_estimate('tmsbl', n_grid, n_sub, n_blocks),
                          solver='tmsbl', residual_history=tuple(residuals))


def _sbl_single(y, A, noise, max_iterations, convergence_tol):
    n_grid = A.shape[1]
    if not np.any(y):
        return np.zeros(n_grid, dtype=complex), np.zeros(n_grid), 0, True
    gamma = np.ones(n_grid)
    active = np.arange(n_grid)
    x = np.zeros(n_grid, dtype=complex)
    converged, iteration = False, 0
    for iteration in range(1, max_iterations + 1):
        sigma, mean = _posterior(A[:, active], gamma[active], noise, y[:, np.newaxis])
        new_gamma = np.zeros(n_grid)
        new_gamma[active] = np.abs(mean[:, 0]) ** 2 + np.maximum(np.real(np.diag(sigma)), 0)
        x = np.zeros(n_grid, dtype=complex)
        x[active] = mean[:, 0]
        change = _gamma_change(new_gamma, gamma)
        gamma = new_gamma
        active = _prune(gamma, active)
        x[gamma == 0] = 0
        if change < convergence_tol:
            converged = True
            break
    return x, gamma, iteration, converged


def sbl_smv(y, A, noise_var, max_iterations=100, convergence_tol=1e-6):
    """
    Sparse Bayesian learning for a single measurement vector, gamma_j = |mu_j|^2 + Sigma_jj.

    Parameters
    ----------
    y: np.ndarray
        (J,) observation
    A: np.ndarray
        (J, N_R) sensing matrix
    noise_var: float or np.ndarray
        Noise variance, scalar or one per observation
    max_iterations: int
    convergence_tol: float

    Returns
    -------
    np.ndarray
        (N_R,) posterior mean
    """
    y, A = np.asarray(y, dtype=complex), np.atleast_2d(A)
    noise = np.broadcast_to(np.asarray(noise_var, dtype=float), y.shape)
    return _sbl_single(y, A, noise, max_iterations, convergence_tol)[0]


def sbl_per_subcarrier(problem):
    """SMV sparse Bayesian learning applied to every subcarrier separately"""
    Y, psi, noise = problem.observations, problem.sensing, problem.noise_cov_diag
    columns, gammas, iterations, converged = [], [], 0, True
    for n in range(problem.n_subcarriers):
        x, gamma, used, ok = _sbl_single(Y[:, n], psi, noise, problem.max_iterations, problem.convergence_tol)
        columns.append(x)
        gammas.append(gamma)
        iterations, converged = max(iterations, used), converged and ok
    return SparseEstimate(
        channel_matrix=np.stack(columns, axis=1), hyperparameters=np.mean(gammas, axis=0),
        correlation=np.eye(problem.n_subcarriers), iterations_used=iterations, converged=converged,
        flop_estimate=flop_estimate('sbl', problem.n_grid, problem.n_subcarriers, problem.n_blocks), solver='sbl')


def omp_per_subcarrier(problem, n_atoms=1):
    """OMP applied to every subcarrier separately, each column refitted by least squares"""
    H = np.zeros((problem.n_grid, problem.n_subcarriers), dtype=complex)
    for n in range(problem.n_subcarriers):
        indices, coefficients = omp(problem.observations[:, n], problem.sensing, n_atoms)
        H[indices, n] = coefficients
    return SparseEstimate(
        channel_matrix=H, hyperparameters=np.sum(np.abs(H) ** 2, axis=1) / problem.n_subcarriers,
        correlation=np.eye(problem.n_subcarriers), iterations_used=n_atoms, converged=True,
        flop_estimate=flop_estimate('omp', problem.n_grid, problem.n_subcarriers, problem.n_blocks), solver='omp')


def somp_mmv(problem, n_atoms=1):
    """Simultaneous OMP on the Stage-2 model: atoms shared by all subcarriers, then a least-squares refit"""
    if not np.any(problem.observations):
        return _zero_estimate(problem, 'dcs_somp')
    operator = _as_operator(problem.sensing)
    indices, _ = _simultaneous_pursuit(list(problem.observations.T), [operator] * problem.n_subcarriers, n_atoms)
    H = np.zeros((problem.n_grid, problem.n_subcarriers), dtype=complex)
    H[indices] = np.linalg.lstsq(problem.sensing[:, indices], problem.observations, rcond=None)[0]
    return SparseEstimate(
        channel_matrix=H, hyperparameters=np.sum(np.abs(H) ** 2, axis=1) / problem.n_subcarriers,
        correlation=np.eye(problem.n_subcarriers), iterations_used=n_atoms, converged=True,
        flop_estimate=flop_estimate('dcs_somp', problem.n_grid, problem.n_subcarriers, problem.n_blocks),
        solver='dcs_somp')


def _soft_threshold(values, threshold):
    """Complex soft thresholding and its divergence 1 - threshold / (2|x|) on the surviving entries"""
    magnitude = np.abs(values)
    safe = np.where(magnitude > 0, magnitude, 1)
    shrunk = np.maximum(magnitude - threshold, 0)
    divergence = np.where(shrunk > 0, 1 - threshold / (2 * safe), 0)
    return values * shrunk / safe, divergence


def amp_mmv(problem, damping=0.7, iterations=50, alpha=1.5):
    """
    Complex approximate message passing with a column-wise soft-threshold denoiser.

    Runs on Psi / sqrt(J), thresholds each subcarrier at alpha ||z_n|| / sqrt(J) and keeps the Onsager correction.
    Iterates are damped. If the residual grows tenfold within five iterations the run is stopped and the iterate with
    the smallest residual so far is returned, flagged as not converged.

    Parameters
    ----------
    problem: MmvProblem
    damping: float
        Weight of the new iterate
    iterations: int
    alpha: float
        Threshold multiplier

    Returns
    -------
    SparseEstimate
    """
    n_blocks, n_sub = problem.observations.shape
    if n_blocks < 2:
        raise ShapeMismatchError(f'AMP needs at least 2 blocks, got {n_blocks}')
    if not np.any(problem.observations):
        return _zero_estimate(problem, 'amp')
    scale = np.sqrt(n_blocks)
    A = problem.sensing / scale
    y = problem.observations / scale
    X = np.zeros((problem.n_grid, n_sub), dtype=complex)
    Z = y.copy()
    residuals = []
    best, best_residual = X, np.inf
    converged, diverged, iteration = False, False, 0
    for iteration in range(1, iterations + 1):
        pseudo_data = X + A.conj().T @ Z
        threshold = alpha * np.linalg.norm(Z, axis=0) / np.sqrt(n_blocks)
        X_new, divergence = _soft_threshold(pseudo_data, threshold)
        onsager = divergence.sum(axis=0) / n_blocks
        Z_new = y - A @ X_new + onsager * Z
        X_next = damping * X_new + (1 - damping) * X
        Z = damping * Z_new + (1 - damping) * Z
        step = np.linalg.norm(X_next - X) / max(np.linalg.norm(X_next), np.finfo(float).tiny)
        X = X_next
        residual = np.linalg.norm(y - A @ X)
        residuals.append(residual)
        if not np.isfinite(residual) or (len(residuals) > 5 and residual > 10 * residuals[-6]):
            diverged = True
            break
        if residual <= best_residual:
            best, best_residual = X, residual
        if step < problem.convergence_tol:
            converged = True
            break
    if diverged:
        logger.warning(f'AMP diverged after {iteration} iterations, returning the best stable iterate')
        X = best
    return SparseEstimate(
        channel_matrix=X, hyperparameters=np.sum(np.abs(X) ** 2, axis=1) / n_sub, correlation=np.eye(n_sub),
        iterations_used=iteration, converged=converged,
        flop_estimate=flop_estimate('amp', problem.n_grid, n_sub, n_blocks), solver='amp')
