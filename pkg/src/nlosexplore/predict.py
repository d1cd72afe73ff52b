"""Global map prediction from the belief and NLOS occupied evidence.

The built-in ensemble closes gaps between observed walls and NLOS evidence
with square structuring elements of increasing radius, one member per
radius. An external command can replace it through a small file protocol:

* the adapter writes ``belief.pgm``, ``evidence.pgm`` and ``mask.pgm`` into a
  fresh directory and runs the command with that directory as its only
  argument;
* the command writes ``pred_000.pgm`` ... ``pred_{K-1}.pgm`` there and exits 0.

All files use the grid PGM encoding. The two binary masks are written as
grids whose set cells are Occupied (byte 0) and clear cells Free (byte 255),
so ``load_grid(path).occupied`` recovers the mask.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .gridmap import FREE, OCCUPIED, GridFormatError, OccupancyGrid, load_grid, save_grid

DEFAULT_RADII = (1, 2, 3)
DEFAULT_TIMEOUT = 60.0


class PredictorError(RuntimeError):
    """An external predictor failed or produced unusable output."""


@dataclass
class PredictorInput:
    belief: OccupancyGrid
    nlos_evidence: np.ndarray
    unknown_mask: np.ndarray

    def __post_init__(self):
        self.nlos_evidence = np.asarray(self.nlos_evidence, bool)
        self.unknown_mask = np.asarray(self.unknown_mask, bool)
        for name in ("nlos_evidence", "unknown_mask"):
            if getattr(self, name).shape != self.belief.shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} does not match belief {self.belief.shape}")
        if not np.array_equal(self.unknown_mask, self.belief.unknown):
            raise ValueError("unknown_mask disagrees with the belief's unknown cells")

    @classmethod
    def from_belief(cls, belief: OccupancyGrid, evidence=None) -> "PredictorInput":
        if evidence is None:
            evidence = np.zeros(belief.shape, bool)
        return cls(belief, evidence, belief.unknown)


@dataclass
class PredictedEnsemble:
    members: list
    disagreement: np.ndarray

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")

    def __len__(self):
        return len(self.members)

    def occupied_fraction(self) -> np.ndarray:
        return np.mean([m.occupied for m in self.members], axis=0)

    def majority(self) -> OccupancyGrid:
        """Cells Occupied in at least half of the members."""
        m0 = self.members[0]
        cells = np.where(self.occupied_fraction() >= 0.5, int(OCCUPIED), int(FREE)).astype(np.uint8)
        return OccupancyGrid(cells, m0.resolution)


def disagreement_of(members: Sequence[OccupancyGrid]) -> np.ndarray:
    """``4 p (1 - p)`` with ``p`` the fraction of members marking a cell Occupied."""
    if not members:
        raise ValueError("need at least one member")
    shape = members[0].shape
    if any(m.shape != shape for m in members):
        raise ValueError("members are on different lattices")
    p = np.mean([m.occupied for m in members], axis=0)
    return 4.0 * p * (1.0 - p)


def close_square(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary closing with a ``(2r+1)`` square, computed on a padded copy so
    the result always contains ``mask``."""
    if radius < 0:
        raise ValueError("closing radius must be >= 0")
    if radius == 0:
        return mask.copy()
    se = np.ones((2 * radius + 1,) * 2, bool)
    padded = np.pad(mask, radius)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, se), se)
    return closed[radius:-radius, radius:-radius]


def _complete(belief: OccupancyGrid, occupied_guess: np.ndarray) -> OccupancyGrid:
    """Keep observed cells; unknown cells become Occupied where guessed, else Free."""
    cells = belief.cells.copy()
    unk = belief.unknown
    cells[unk] = np.where(occupied_guess[unk], int(OCCUPIED), int(FREE))
    return OccupancyGrid(cells, belief.resolution)


def predict_builtin(inp: PredictorInput, radii: Sequence[int] = DEFAULT_RADII) -> PredictedEnsemble:
    radii = list(radii)
    if not radii:
        raise ValueError("radii must be non-empty")
    seeds = inp.belief.occupied | inp.nlos_evidence
    members = [_complete(inp.belief, close_square(seeds, int(r))) for r in radii]
    return PredictedEnsemble(members, disagreement_of(members))


def write_predictor_input(inp: PredictorInput, directory) -> None:
    d = Path(directory)
    save_grid(inp.belief, d / "belief.pgm")
    for name, mask in (("evidence.pgm", inp.nlos_evidence), ("mask.pgm", inp.unknown_mask)):
        cells = np.where(mask, int(OCCUPIED), int(FREE)).astype(np.uint8)
        save_grid(OccupancyGrid(cells, inp.belief.resolution), d / name)


def read_predictor_input(directory, resolution: float = 0.1) -> PredictorInput:
    d = Path(directory)
    belief = load_grid(d / "belief.pgm", resolution=resolution)
    evidence = load_grid(d / "evidence.pgm", resolution=resolution).occupied
    mask = load_grid(d / "mask.pgm", resolution=resolution).occupied
    return PredictorInput(belief, evidence, mask)


def _tail(text: str, n: int = 2000) -> str:
    text = text.strip()
    return text if len(text) <= n else "..." + text[-n:]


def predict_external(inp: PredictorInput, command, k: int, timeout: float = DEFAULT_TIMEOUT) -> PredictedEnsemble:
    """Run an external predictor and load its ``k`` members.

    ``command`` is a shell-style string or an argument list; the exchange
    directory is appended as the last argument. Observed cells are restored
    in every member if the predictor altered them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    if not argv:
        raise PredictorError("empty predictor command")
    with tempfile.TemporaryDirectory(prefix="nlosx-pred-") as tmp:
        write_predictor_input(inp, tmp)
        try:
            proc = subprocess.run(argv + [tmp], capture_output=True, text=True, timeout=timeout)
        except FileNotFoundError as exc:
            raise PredictorError(f"predictor command not found: {argv[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise PredictorError(f"predictor timed out after {timeout:g} s") from exc
        if proc.returncode != 0:
            raise PredictorError(
                f"predictor exited with status {proc.returncode}\nstderr: {_tail(proc.stderr)}"
            )
        members = []
        for i in range(k):
            path = Path(tmp) / f"pred_{i:03d}.pgm"
            if not path.exists():
                raise PredictorError(f"predictor did not write {path.name}")
            try:
                grid = load_grid(path, resolution=inp.belief.resolution)
            except GridFormatError as exc:
                raise PredictorError(f"{path.name}: {exc}") from exc
            if grid.shape != inp.belief.shape:
                raise PredictorError(f"{path.name}: shape {grid.shape} differs from belief {inp.belief.shape}")
            if grid.unknown.any():
                raise PredictorError(f"{path.name}: {int(grid.unknown.sum())} cells left unknown")
            observed = ~inp.belief.unknown
            grid.cells[observed] = inp.belief.cells[observed]
            members.append(grid)
    return PredictedEnsemble(members, disagreement_of(members))
