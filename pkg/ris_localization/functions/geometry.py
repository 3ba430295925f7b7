import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ris_localization.functions.errors import InvalidDelayError, InvalidPathError, InvalidSceneError

logger = logging.getLogger('ris_localization')

# simulation value, not the CODATA constant
SPEED_OF_LIGHT = 2.99792e8


class Segment(str, Enum):
    BS_RIS = 'BS_RIS'
    RIS_UE = 'RIS_UE'


def _as_point(value, name):
    point = np.asarray(value, dtype=float).reshape(-1)
    if point.shape != (2,):
        raise InvalidSceneError(f'{name} must be a 2-vector, got shape {np.shape(value)}')
    if not np.all(np.isfinite(point)):
        raise InvalidSceneError(f'{name} must be finite, got {point}')
    point.flags.writeable = False
    return point


@dataclass(frozen=True)
class Scene:
    """
    Two-dimensional placement of the base station, the RIS, the user equipment and the scatterers.

    Scatterers in `scatterers_br` create additional paths on the BS -> RIS segment, those in `scatterers_rm` on the
    RIS -> UE segment. Positions are stored as read-only float arrays so that scenes can be shared between workers.
    """
    bs_position: np.ndarray
    ris_position: np.ndarray
    ue_position: np.ndarray
    scatterers_br: tuple = field(default=())
    scatterers_rm: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, 'bs_position', _as_point(self.bs_position, 'bs_position'))
        object.__setattr__(self, 'ris_position', _as_point(self.ris_position, 'ris_position'))
        object.__setattr__(self, 'ue_position', _as_point(self.ue_position, 'ue_position'))
        object.__setattr__(self, 'scatterers_br', tuple(
            _as_point(s, f'scatterers_br[{i}]') for i, s in enumerate(self.scatterers_br)))
        object.__setattr__(self, 'scatterers_rm', tuple(
            _as_point(s, f'scatterers_rm[{i}]') for i, s in enumerate(self.scatterers_rm)))

        terminals = {'bs_position': self.bs_position, 'ris_position': self.ris_position,
                     'ue_position': self.ue_position}
        names = list(terminals)
        for i, first in enumerate(names):
            for second in names[i + 1:]:
                if np.linalg.norm(terminals[first] - terminals[second]) <= 0:
                    raise InvalidSceneError(f'{first} and {second} coincide at {terminals[first]}')
        for segment in Segment:
            start, stop, scatterers = self.endpoints(segment)
            for i, scatterer in enumerate(scatterers):
                if min(np.linalg.norm(scatterer - start), np.linalg.norm(scatterer - stop)) <= 0:
                    raise InvalidSceneError(
                        f'scatterer {i} of segment {segment.value} coincides with a segment endpoint at {scatterer}')

    def endpoints(self, segment):
        """Transmitting terminal, receiving terminal and scatterers of a segment"""
        segment = Segment(segment)
        if segment == Segment.BS_RIS:
            return self.bs_position, self.ris_position, self.scatterers_br
        return self.ris_position, self.ue_position, self.scatterers_rm

    def n_paths(self, segment):
        return 1 + len(self.endpoints(segment)[2])

    def with_ue(self, ue_position):
        return replace(self, ue_position=ue_position)


@dataclass(frozen=True)
class PathGeometry:
    segment: Segment
    path_index: int
    distance: float
    toa: float
    departure_angle: float
    arrival_angle: float

    @property
    def is_los(self):
        return self.path_index == 0


def _hops(scene, segment, path_index):
    start, stop, scatterers = scene.endpoints(segment)
    if not 0 <= path_index <= len(scatterers):
        raise InvalidPathError(
            f'path_index {path_index} out of range for segment {Segment(segment).value} with '
            f'{len(scatterers)} scatterers')
    if path_index == 0:
        return [start, stop]
    return [start, scatterers[path_index - 1], stop]


def path_distance(scene, segment, path_index):
    """
    Length of a propagation path, i.e. the direct distance for path 0 and the distance via the scatterer otherwise.

    Parameters
    ----------
    scene: Scene
    segment: Segment or str
        BS_RIS or RIS_UE
    path_index: int
        0 for the line-of-sight path, l >= 1 for the path reflected by the l-th scatterer of the segment

    Returns
    -------
    float
        Path length in meters
    """
    hops = _hops(scene, segment, path_index)
    return float(sum(np.linalg.norm(b - a) for a, b in zip(hops[:-1], hops[1:])))


def path_angles(scene, segment, path_index):
    """
    Departure and arrival angles of a path, both measured from the global +x axis.

    The departure angle points from the transmitting array along the first hop. The arrival angle points from the
    receiving array back along the last hop, which is the direction the receiving array sees the signal come from.

    Returns
    -------
    tuple of float
        (departure_angle, arrival_angle) in radians, in (-pi, pi]
    """
    hops = _hops(scene, segment, path_index)
    first = hops[1] - hops[0]
    last = hops[-2] - hops[-1]
    return float(np.arctan2(first[1], first[0])), float(np.arctan2(last[1], last[0]))


def path_geometry(scene, segment, path_index):
    segment = Segment(segment)
    distance = path_distance(scene, segment, path_index)
    departure, arrival = path_angles(scene, segment, path_index)
    return PathGeometry(segment=segment, path_index=path_index, distance=distance,
                        toa=distance / SPEED_OF_LIGHT, departure_angle=departure, arrival_angle=arrival)


def scene_paths(scene, segment):
    """All paths of a segment, line-of-sight first"""
    return [path_geometry(scene, segment, index) for index in range(scene.n_paths(segment))]


def recover_position(ris_position, aor, toa_rm):
    """
    Place the user equipment at distance c * toa_rm from the RIS, in the direction of the angle of reflection.

    Parameters
    ----------
    ris_position: array-like
        RIS position in meters
    aor: float
        Angle of reflection at the RIS, towards the UE, radians
    toa_rm: float
        Delay of the RIS -> UE line-of-sight path in seconds, must be non-negative

    Returns
    -------
    np.ndarray
        Estimated UE position
    """
    if toa_rm < 0:
        raise InvalidDelayError(f'RIS -> UE delay must be non-negative, got {toa_rm}')
    ris_position = np.asarray(ris_position, dtype=float)
    return ris_position + SPEED_OF_LIGHT * toa_rm * np.array([np.cos(aor), np.sin(aor)])
