import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ris_localization.functions.channel import check_unit_modulus, spatial_steering
from ris_localization.functions.errors import RisLocalizationError, ShapeMismatchError, SpatialFrequencyOverflowError

logger = logging.getLogger('ris_localization')


@dataclass(frozen=True)
class DftDictionary:
    """Unitary DFT beamspace basis; column l is the steering vector at spatial frequency grid[l]"""
    n: int
    spacing_ratio: float
    grid: np.ndarray
    matrix: np.ndarray

    @property
    def angles(self):
        return np.array([grid_to_angle(index, self.n, self.spacing_ratio) for index in range(self.n)])


class KroneckerOperator:
    """
    The matrix A kron B, applied without forming it.

    Vectors are indexed the way np.kron lays out its columns: entry i of the input belongs to column j of A and
    column l of B with (j, l) = divmod(i, B.shape[1]). Equivalently, the input is X.ravel() for X of shape
    (A.shape[1], B.shape[1]) and matvec returns (A X B^T).ravel().
    """

    def __init__(self, left, right):
        self.left = np.asarray(left)
        self.right = np.asarray(right)
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ShapeMismatchError('Kronecker factors must be matrices')

    @property
    def shape(self):
        return (self.left.shape[0] * self.right.shape[0], self.left.shape[1] * self.right.shape[1])

    def matvec(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.shape[1]:
            raise ShapeMismatchError(f'operator with shape {self.shape} cannot act on a vector of length {x.shape[0]}')
        x = x.reshape(self.left.shape[1], self.right.shape[1])
        return (self.left @ x @ self.right.T).ravel()

    def rmatvec(self, y):
        y = np.asarray(y)
        if y.shape[0] != self.shape[0]:
            raise ShapeMismatchError(f'adjoint of operator {self.shape} cannot act on a vector of length {y.shape[0]}')
        y = y.reshape(self.left.shape[0], self.right.shape[0])
        return (self.left.conj().T @ y @ self.right.conj()).ravel()

    def column(self, i):
        j, l = divmod(int(i), self.right.shape[1])
        return np.kron(self.left[:, j], self.right[:, l])

    def column_norms(self):
        return np.kron(np.linalg.norm(self.left, axis=0), np.linalg.norm(self.right, axis=0))

    def compose(self, other):
        """(A kron B)(C kron D) = AC kron BD"""
        return KroneckerOperator(self.left @ other.left, self.right @ other.right)

    @cached_property
    def matrix(self):
        return np.kron(self.left, self.right)


@dataclass(frozen=True)
class SensingOperator:
    """
    Measurement operator `phi` followed by the beamspace `dictionary`; `combined` is their product.

    Stage 1: phi = F^T kron W^H, dictionary = conj(U_B) kron U_M.
    Stage 2: phi = Omega kron I_N, dictionary = U_R kron I_N, so combined.left is the J x N_R matrix Psi.
    """
    phi: KroneckerOperator
    dictionary: KroneckerOperator
    combined: KroneckerOperator

    @property
    def psi(self):
        return self.combined.left


def dft_dictionary(n, spacing_ratio=0.5):
    """
    Build the n x n beamspace dictionary, spatial frequencies q_l = -(n - 1) / (2n) + l / n, l = 0..n-1.

    Columns are scaled by 1/sqrt(n) so that the matrix is unitary.
    """
    if n < 2:
        raise RisLocalizationError(f'dictionary needs at least 2 grid points, got {n}')
    grid = -(n - 1) / (2 * n) + np.arange(n) / n
    return DftDictionary(n=n, spacing_ratio=spacing_ratio, grid=grid, matrix=spatial_steering(n, grid))


def stage1_operator(precoder, combiner, dict_bs, dict_ue):
    """
    Sounding operator of one subcarrier, vec(W^H H F) = (F^T kron W^H)(conj(U_B) kron U_M) vec(H_v).

    vec stacks columns, so H_v has shape (N_M, N_B) and column i of `combined` belongs to BS grid index
    i // N_M and UE grid index i % N_M.
    """
    precoder, combiner = np.asarray(precoder), np.asarray(combiner)
    if precoder.shape[0] != dict_bs.n or combiner.shape[0] != dict_ue.n:
        raise ShapeMismatchError(
            f'precoder {precoder.shape} and combiner {combiner.shape} do not match dictionaries of size '
            f'{dict_bs.n} and {dict_ue.n}')
    phi = KroneckerOperator(precoder.T, combiner.conj().T)
    dictionary = KroneckerOperator(dict_bs.matrix.conj(), dict_ue.matrix)
    return SensingOperator(phi=phi, dictionary=dictionary, combined=phi.compose(dictionary))


def stage2_operator(phase_matrix, dict_ris, n_subcarriers):
    """
    Stage-2 operator Psi = Omega U_R, with Omega stacking one RIS configuration per row, and its subcarrier
    extension Psi kron I_N acting on the rows of H stacked one after another.
    """
    phase_matrix = np.atleast_2d(phase_matrix)
    check_unit_modulus(phase_matrix)
    if phase_matrix.shape[1] != dict_ris.n:
        raise ShapeMismatchError(f'phase matrix {phase_matrix.shape} does not match a dictionary of size {dict_ris.n}')
    eye = np.eye(n_subcarriers)
    phi = KroneckerOperator(phase_matrix, eye)
    dictionary = KroneckerOperator(dict_ris.matrix, eye)
    return SensingOperator(phi=phi, dictionary=dictionary, combined=phi.compose(dictionary))


def grid_to_angle(index, n, spacing_ratio=0.5):
    """
    Physical angle of grid point `index` (0-based), arcsin(q_index / spacing_ratio).

    Raises
    ------
    SpatialFrequencyOverflowError
        if the grid frequency is not reachable with this spacing
    """
    if not 0 <= index < n:
        raise RisLocalizationError(f'grid index {index} outside [0, {n - 1}]')
    argument = (-(n - 1) / (2 * n) + index / n) / spacing_ratio
    if abs(argument) > 1:
        raise SpatialFrequencyOverflowError(
            f'grid index {index} of {n} maps to sin(angle) = {argument:.4f} with spacing {spacing_ratio}')
    return float(np.arcsin(argument))


def angle_to_grid(angle, n, spacing_ratio=0.5):
    """Index of the grid point nearest in spatial frequency, wrapping around the grid edge"""
    position = spacing_ratio * np.sin(angle) * n + (n - 1) / 2
    return int(np.mod(np.floor(position + 0.5), n))
