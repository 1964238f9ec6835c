"""Multi-camera information fusion and bandwidth-budgeted tile selection.

Each camera ("agent") measures the same underlying pose but linearizes it in
its own tangent frame.  An agent's information matrix is carried into the
shared global tangent frame by congruence with the adjoint of its frame
transform, after which information from independent agents simply adds.

For bandwidth-limited settings, each image is cut into tiles whose 6x6
information contributions are the units of communication; selecting which
tiles to send under per-agent and global count budgets is done greedily
against a log-det, trace or minimum-eigenvalue objective, with an exhaustive
enumerator as the small-instance optimum oracle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import se3
from .fisher import FisherInfo, MeasurementModel, NoiseModel, assemble_fim
from .renderer import ALL_PIXELS, PixelSubset, TileGrid
from .se3 import Pose

GLOBAL_FRAME = "global"

# Enumeration guard: exhaustive search walks all 2^n subsets.
MAX_EXHAUSTIVE_BLOCKS = 20


class FrameMismatch(ValueError):
    """Information combined across incompatible tangent frames."""


class InfeasibleBudget(ValueError):
    """Negative per-agent or global budget."""


class TooManyBlocks(ValueError):
    """Exhaustive selection refused above the enumeration guard."""


@dataclass(frozen=True, eq=False)
class AgentObservation:
    """One agent's information matrix in its own tangent frame.

    relative_pose maps the agent's frame to the global frame; transporting
    the information into the global tangent uses its inverse adjoint.
    """

    agent_id: str
    local_info: FisherInfo
    relative_pose: Pose


@dataclass(frozen=True, eq=False)
class TileBlock:
    """One tile's 6x6 information contribution in the global tangent frame."""

    agent_id: str
    tile_id: int
    info: np.ndarray
    pixel_count: int

    def __post_init__(self):
        m = np.asarray(self.info, dtype=np.float64).reshape(6, 6)
        object.__setattr__(self, "info", 0.5 * (m + m.T))

    def key(self) -> tuple:
        return (self.agent_id, self.tile_id)

    def truncated(self, rank: int) -> "TileBlock":
        """Lossy rank-r eigen-sketch of the block (keeps the top-r eigenpairs).

        Cuts the communicated payload from 36 numbers to r * 7; the result is
        PSD and never exceeds the original in the Loewner order.
        """
        vals, vecs = np.linalg.eigh(self.info)
        keep = np.zeros(6, bool)
        keep[np.argsort(vals)[::-1][:rank]] = True
        keep &= vals > 0
        m = (vecs[:, keep] * vals[keep]) @ vecs[:, keep].T
        return TileBlock(self.agent_id, self.tile_id, m, self.pixel_count)


@dataclass(frozen=True)
class Budget:
    """Per-agent tile counts b_a plus a global total B."""

    per_agent: dict = field(default_factory=dict)
    global_total: int = 0

    def validate(self):
        if self.global_total < 0 or any(b < 0 for b in self.per_agent.values()):
            raise InfeasibleBudget("budgets must be nonnegative")

    def admits(self, counts: dict, agent_id: str) -> bool:
        """Can one more tile from agent_id be added to the given counts?"""
        if sum(counts.values()) >= self.global_total:
            return False
        limit = self.per_agent.get(agent_id)
        return limit is None or counts.get(agent_id, 0) < limit


# ---------------------------------------------------------------------------
# selection objectives
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Objective:
    prior_info: np.ndarray | None = None

    def __post_init__(self):
        p = self.prior_info
        p = np.zeros((6, 6)) if p is None else np.asarray(p, dtype=np.float64)
        object.__setattr__(self, "prior_info", 0.5 * (p + p.T))

    @property
    def epsilon(self) -> float:
        return 0.0

    def base_matrix(self) -> np.ndarray:
        return self.prior_info + self.epsilon * np.eye(6)

    def value(self, m: np.ndarray) -> float:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class LogDet(_Objective):
    """log det(I0 + eps I + sum), monotone submodular; greedy is (1 - 1/e)."""

    ridge: float = 1e-6

    def __post_init__(self):
        super().__post_init__()
        if self.ridge <= 0:
            raise ValueError("log-det objective needs a positive ridge")

    @property
    def epsilon(self) -> float:
        return self.ridge

    def value(self, m: np.ndarray) -> float:
        sign, logdet = np.linalg.slogdet(m)
        return float(logdet) if sign > 0 else -np.inf


@dataclass(frozen=True, eq=False)
class Trace(_Objective):
    """tr(I0 + sum), modular; greedy is exactly optimal."""

    def value(self, m: np.ndarray) -> float:
        return float(np.trace(m))


@dataclass(frozen=True, eq=False)
class LambdaMin(_Objective):
    """lambda_min(I0 + eps I + sum); not submodular, greedy is a heuristic."""

    ridge: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    @property
    def epsilon(self) -> float:
        return self.ridge

    def value(self, m: np.ndarray) -> float:
        return float(np.linalg.eigvalsh(m)[0])


SelectionObjective = LogDet | Trace | LambdaMin


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Chosen tiles with the objective trajectory along the selection."""

    selected: list
    objective_value: float
    base_value: float
    history: list


# ---------------------------------------------------------------------------
# transport and fusion
# ---------------------------------------------------------------------------


class MountedModel:
    """A measurement model whose camera is rigidly offset from the pose frame.

    The effective world-to-camera transform is mount * pose, so derivative
    columns with respect to the pose twist are the base model's columns at
    the composed pose, recombined through the adjoint of the mount.  This is
    how an agent's renderer is expressed directly in another tangent frame.
    """

    def __init__(self, base: MeasurementModel, mount: Pose):
        self.base = base
        self.mount = mount
        self._ad = se3.adjoint(mount)

    @property
    def output_size(self) -> int:
        return self.base.output_size

    def measure(self, pose: Pose, pixels: PixelSubset = ALL_PIXELS) -> np.ndarray:
        return self.base.measure(se3.compose(self.mount, pose), pixels)

    def jvp(
        self, pose: Pose, direction: np.ndarray, pixels: PixelSubset = ALL_PIXELS
    ) -> np.ndarray:
        composed = se3.compose(self.mount, pose)
        return self.base.jvp(composed, self._ad @ np.asarray(direction), pixels)

    def jvp_columns(self, pose: Pose, pixels: PixelSubset = ALL_PIXELS) -> np.ndarray:
        composed = se3.compose(self.mount, pose)
        return self.base.jvp_columns(composed, pixels) @ self._ad


def transport(obs: AgentObservation) -> FisherInfo:
    """Carry an agent's information into the global tangent frame.

    With A = Ad(g^-1) for the agent-to-global transform g, the global-frame
    information is A^T I A.  Congruence preserves positive semidefiniteness
    and rank.
    """
    if obs.local_info.frame == GLOBAL_FRAME:
        raise FrameMismatch(f"agent {obs.agent_id} information is already global")
    a = se3.adjoint(se3.inverse(obs.relative_pose))
    m = a.T @ obs.local_info.matrix @ a
    return FisherInfo(
        0.5 * (m + m.T),
        pixel_count=obs.local_info.pixel_count,
        subsample_rate=obs.local_info.subsample_rate,
        frame=GLOBAL_FRAME,
    )


def fuse(observations: list[AgentObservation]) -> FisherInfo:
    """Joint information: transport every agent, then add.

    Valid under conditionally independent pixel noise across agents; the
    fused covariance bound never exceeds any single agent's bound.
    """
    if not observations:
        raise ValueError("need at least one observation to fuse")
    total = np.zeros((6, 6))
    pixel_count = 0
    rates = []
    for obs in observations:
        ti = transport(obs)
        total += ti.matrix
        pixel_count += ti.pixel_count
        rates.append(ti.subsample_rate)
    return FisherInfo(
        0.5 * (total + total.T),
        pixel_count=pixel_count,
        subsample_rate=float(np.mean(rates)),
        frame=GLOBAL_FRAME,
    )


def tile_infos(
    model: MeasurementModel,
    pose: Pose,
    noise: NoiseModel,
    grid: TileGrid,
    relative_pose: Pose,
    agent_id: str = "agent",
    camera=None,
    channels: int = None,
) -> list[TileBlock]:
    """Per-tile information blocks, already transported to the global frame.

    The grid partitions the image disjointly, so with diagonal noise the
    blocks of one agent sum to its transported full-image information.
    Image geometry is taken from the model when available.
    """
    cam = camera if camera is not None else model.camera
    ch = channels if channels is not None else model.scene.channels
    a = se3.adjoint(se3.inverse(relative_pose))
    blocks = []
    for tile_id in range(grid.n_tiles):
        idx = grid.tile_pixel_indices(cam.height, cam.width, ch, tile_id)
        info = assemble_fim(model, pose, noise, PixelSubset.from_indices(idx))
        m = a.T @ info.matrix @ a
        blocks.append(TileBlock(agent_id, tile_id, m, idx.size))
    return blocks


# ---------------------------------------------------------------------------
# budgeted selection
# ---------------------------------------------------------------------------


def _canonical_value(
    blocks: list[TileBlock], chosen: list[tuple], obj: SelectionObjective
) -> float:
    """Objective re-evaluated over the sorted selection, so greedy and
    exhaustive report bit-identical values for identical sets."""
    by_key = {b.key(): b for b in blocks}
    m = obj.base_matrix()
    for key in sorted(chosen):
        m = m + by_key[key].info
    return obj.value(m)


def select_greedy(
    blocks: list[TileBlock], budget: Budget, obj: SelectionObjective
) -> SelectionResult:
    """Greedy marginal-gain selection under per-agent and global budgets.

    Adds the feasible block with the largest objective gain each step, ties
    broken by (agent_id, tile_id); stops when the budget is exhausted or no
    block improves the objective.
    """
    budget.validate()
    base = obj.value(obj.base_matrix())
    current = obj.base_matrix()
    counts: dict = {}
    remaining = sorted(blocks, key=TileBlock.key)
    chosen: list[tuple] = []
    history = []
    value = base
    while True:
        best = None
        best_gain = 0.0
        for block in remaining:
            if not budget.admits(counts, block.agent_id):
                continue
            gain = obj.value(current + block.info) - value
            if gain > best_gain:
                best, best_gain = block, gain
        if best is None:
            break
        current = current + best.info
        value += best_gain
        counts[best.agent_id] = counts.get(best.agent_id, 0) + 1
        chosen.append(best.key())
        remaining.remove(best)
        history.append(
            {
                "step": len(chosen),
                "agent_id": best.agent_id,
                "tile_id": best.tile_id,
                "objective_value": value,
            }
        )
    final = _canonical_value(blocks, chosen, obj)
    return SelectionResult(chosen, final, base, history)


def _feasible(keys: tuple, budget: Budget) -> bool:
    counts: dict = {}
    for agent_id, _ in keys:
        counts[agent_id] = counts.get(agent_id, 0) + 1
    if sum(counts.values()) > budget.global_total:
        return False
    return all(counts.get(a, 0) <= b for a, b in budget.per_agent.items())


def select_exhaustive(
    blocks: list[TileBlock], budget: Budget, obj: SelectionObjective
) -> SelectionResult:
    """True optimum by enumerating every feasible subset (guarded at 2^20)."""
    budget.validate()
    if len(blocks) > MAX_EXHAUSTIVE_BLOCKS:
        raise TooManyBlocks(f"{len(blocks)} blocks exceed the exhaustive limit")
    base = obj.value(obj.base_matrix())
    ordered = sorted(blocks, key=TileBlock.key)
    best_keys: list = []
    best_value = base
    for size in range(1, min(len(ordered), budget.global_total) + 1):
        for combo in itertools.combinations(ordered, size):
            keys = tuple(b.key() for b in combo)
            if not _feasible(keys, budget):
                continue
            value = _canonical_value(blocks, list(keys), obj)
            if value > best_value:
                best_value = value
                best_keys = list(keys)
    # Replay the optimum in key order so the history has the same shape as
    # greedy's (cumulative objective per added block).
    by_key = {b.key(): b for b in blocks}
    history = []
    m = obj.base_matrix()
    for step, key in enumerate(sorted(best_keys), start=1):
        m = m + by_key[key].info
        history.append(
            {
                "step": step,
                "agent_id": key[0],
                "tile_id": key[1],
                "objective_value": obj.value(m),
            }
        )
    return SelectionResult(sorted(best_keys), best_value, base, history)


def select_random(
    blocks: list[TileBlock],
    budget: Budget,
    obj: SelectionObjective,
    rng: np.random.Generator,
    size: int = None,
) -> SelectionResult:
    """Uniform-random feasible selection, the baseline greedy is measured
    against.  Picks random blocks until `size` are chosen (default: as many
    as the budget allows)."""
    budget.validate()
    pool = sorted(blocks, key=TileBlock.key)
    counts: dict = {}
    chosen: list[tuple] = []
    limit = budget.global_total if size is None else size
    while len(chosen) < limit:
        feasible = [b for b in pool if budget.admits(counts, b.agent_id)]
        if not feasible:
            break
        pick = feasible[int(rng.integers(len(feasible)))]
        counts[pick.agent_id] = counts.get(pick.agent_id, 0) + 1
        chosen.append(pick.key())
        pool.remove(pick)
    value = _canonical_value(blocks, chosen, obj)
    base = obj.value(obj.base_matrix())
    return SelectionResult(chosen, value, base, [])
