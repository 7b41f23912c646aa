"""Affine iterated function systems and chaos-game rendering."""

import logging
from dataclasses import dataclass, field

import numpy as np

from fedspace.core.errors import DivergenceError, SamplingError

logger = logging.getLogger(__name__)

CONTRACTION_BAND = (0.4, 0.8)
CONTRACTION_BOUND = 1.0
DET_FLOOR = 1e-3
PROB_FLOOR = 1e-3
BURN_IN = 100
DEFAULT_ITERATIONS = 50_000
DEFAULT_WALKERS = 500
ESCAPE_RADIUS = 1e6


@dataclass
class IfsCode:
    """An affine IFS: maps ``p -> A_m p + b_m`` chosen with probabilities ``probs``.

    Attributes:
        matrices: Array of shape (M, 2, 2)
        offsets: Array of shape (M, 2)
        probs: Selection probabilities, shape (M,)
    """

    matrices: np.ndarray
    offsets: np.ndarray
    probs: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self) -> None:
        self.matrices = np.asarray(self.matrices, dtype=np.float64).reshape(-1, 2, 2)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 2)
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if not (len(self.matrices) == len(self.offsets) == len(self.probs)):
            raise SamplingError("matrices, offsets and probs must have one entry per map")
        if (self.probs < 0).any() or abs(self.probs.sum() - 1.0) > 1e-9:
            raise SamplingError(f"probs must be nonnegative and sum to 1, got {self.probs}")

    @property
    def num_maps(self) -> int:
        """M."""
        return len(self.matrices)

    @classmethod
    def from_maps(
        cls,
        matrices: np.ndarray,
        offsets: np.ndarray,
        contraction_bound: float = CONTRACTION_BOUND,
        det_floor: float = DET_FLOOR,
        prob_floor: float = PROB_FLOOR,
    ) -> "IfsCode":
        """Build a code with probabilities proportional to ``|det A_m|``.

        Raises:
            SamplingError: If a map is degenerate (``|det A| < det_floor``) or
                exceeds the contraction bound
        """
        matrices = np.asarray(matrices, dtype=np.float64).reshape(-1, 2, 2)
        dets = np.abs(np.linalg.det(matrices))
        if (dets < det_floor).any():
            raise SamplingError(f"degenerate map: |det A| = {dets.min():.3g} < {det_floor}")
        sigma = singular_values(matrices)[:, 0]
        if (sigma > contraction_bound).any():
            raise SamplingError(f"map exceeds contraction bound: {sigma.max():.3f} > {contraction_bound}")
        probs = np.maximum(dets / dets.sum(), prob_floor)
        return cls(matrices, offsets, probs / probs.sum())

    def mean_contraction(self) -> float:
        """Probability-weighted mean of each map's largest singular value."""
        return float(np.dot(self.probs, singular_values(self.matrices)[:, 0]))

    def jittered(self, rng: np.random.Generator, scale: float = 0.02) -> "IfsCode":
        """Copy with every matrix/offset entry scaled by ``1 + U(-scale, scale)``."""
        matrices = self.matrices * (1.0 + rng.uniform(-scale, scale, self.matrices.shape))
        offsets = self.offsets * (1.0 + rng.uniform(-scale, scale, self.offsets.shape))
        return IfsCode(matrices, offsets, self.probs.copy())

    def to_dict(self) -> dict[str, list]:
        """JSON form."""
        return {
            "matrices": self.matrices.tolist(),
            "offsets": self.offsets.tolist(),
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, list]) -> "IfsCode":
        """Inverse of :meth:`to_dict`."""
        return cls(np.array(data["matrices"]), np.array(data["offsets"]), np.array(data["probs"]))


def singular_values(matrices: np.ndarray) -> np.ndarray:
    """Singular values of each 2x2 matrix, descending, shape (M, 2)."""
    return np.linalg.svd(np.asarray(matrices).reshape(-1, 2, 2), compute_uv=False)


def _sample_map(
    rng: np.random.Generator, contraction_bound: float, det_floor: float, max_attempts: int
) -> np.ndarray | None:
    """Draw one 2x2 matrix with uniform entries until it is admissible on its own."""
    for _ in range(max_attempts):
        matrix = rng.uniform(-1.0, 1.0, size=(2, 2))
        if abs(np.linalg.det(matrix)) >= det_floor and singular_values(matrix)[0, 0] <= contraction_bound:
            return matrix
    return None


def sample_ifs(
    num_maps: int,
    rng: np.random.Generator,
    band: tuple[float, float] = CONTRACTION_BAND,
    contraction_bound: float = CONTRACTION_BOUND,
    det_floor: float = DET_FLOOR,
    max_attempts: int = 10_000,
) -> IfsCode:
    """Rejection-sample an IFS code whose mean contraction lies in ``band``.

    Map entries are uniform in [-1, 1]. Each map is redrawn on its own until it
    passes the determinant floor and contraction bound, then the assembled code
    is redrawn until its mean contraction falls in ``band``. ``max_attempts``
    caps both the per-map draws and the code assemblies.

    Raises:
        SamplingError: If ``num_maps`` is outside [2, 8] or the budget runs out
    """
    if not 2 <= num_maps <= 8:
        raise SamplingError(f"num_maps must be in [2, 8], got {num_maps}")
    for _ in range(max_attempts):
        maps = [_sample_map(rng, contraction_bound, det_floor, max_attempts) for _ in range(num_maps)]
        if any(m is None for m in maps):
            break
        offsets = rng.uniform(-1.0, 1.0, size=(num_maps, 2))
        code = IfsCode.from_maps(np.stack(maps), offsets, contraction_bound, det_floor)
        if band[0] <= code.mean_contraction() <= band[1]:
            return code
    raise SamplingError(f"no admissible {num_maps}-map IFS code in {max_attempts} attempts")


def render_fractal(
    code: IfsCode,
    size: int,
    iterations: int,
    rng: np.random.Generator,
    burn_in: int = BURN_IN,
    walkers: int = DEFAULT_WALKERS,
) -> np.ndarray:
    """Chaos-game rendering into a ``size x size`` grid in [0, 1].

    The orbit is run as ``walkers`` independent chains advanced together; each
    chain discards ``burn_in`` steps, then contributes its visits until
    ``iterations`` points are accumulated. Visited points are fitted to the
    grid by their bounding box, and counts are divided by the maximum count.

    Raises:
        ValueError: If ``size < 16`` or ``iterations < 1000``
        DivergenceError: If any orbit leaves the finite range
    """
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    if iterations < 1000:
        raise ValueError(f"iterations must be >= 1000, got {iterations}")

    walkers = min(walkers, iterations)
    steps = -(-iterations // walkers)
    points = rng.uniform(-1.0, 1.0, size=(walkers, 2))
    choices = rng.choice(code.num_maps, size=(burn_in + steps, walkers), p=code.probs)

    visited = np.empty((steps, walkers, 2))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(burn_in + steps):
            m = choices[t]
            points = np.einsum("wij,wj->wi", code.matrices[m], points) + code.offsets[m]
            if t >= burn_in:
                visited[t - burn_in] = points
    flat = visited.reshape(-1, 2)[:iterations]
    if not np.isfinite(flat).all() or np.abs(flat).max() > ESCAPE_RADIUS:
        raise DivergenceError("chaos-game orbit escaped; the IFS code is not contractive")

    lo = flat.min(axis=0)
    extent = flat.max(axis=0) - lo
    scale = float(extent.max())
    if scale == 0.0:
        cells = np.full((len(flat), 2), size // 2, dtype=np.int64)
    else:
        # fit the longer side to the grid, center the shorter one
        centered = (flat - lo - extent / 2.0) / scale + 0.5
        cells = np.clip(np.floor(centered * size), 0, size - 1).astype(np.int64)

    grid = np.zeros((size, size), dtype=np.float64)
    np.add.at(grid, (cells[:, 1], cells[:, 0]), 1.0)
    return grid / grid.max()


def nonzero_fraction(image: np.ndarray) -> float:
    """Share of pixels with any visit."""
    return float(np.count_nonzero(image)) / image.size
