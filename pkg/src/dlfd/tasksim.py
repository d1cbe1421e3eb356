"""Planar needle-insertion simulator with a scripted two-arm expert.

A rectangular block of tissue is a grid of point masses joined by
structural and shear springs, glued to the table along its bottom row.
Arm 1 (the right arm in the state layout) sweeps a semicircular needle of
radius ``needle_radius`` about a fixed centre; while the tip is inside the
tissue it drags nearby nodes along the needle tangent. Arm 2 (the left arm)
holds the two top-right surface nodes and shifts them so that a marked
surface point, the target exit, ends up where the needle leaves the tissue.

Coordinates are metres, with the undeformed tissue surface at ``y = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .dataset import Demonstration, DemonstrationRecord
from .errors import ConfigError, SimulationError

EXIT_BISECTION_TOL = 1e-9
DATASET_NOISE = 5e-4
_ARC_OVERSHOOT = 0.6


@dataclass(frozen=True)
class SimConfig:
    grid: tuple = (8, 8)
    tissue_size: tuple = (1.0, 0.5)
    stiffness: float = 200.0
    damping: float = 4.0
    node_mass: float = 0.05
    dt: float = 0.01
    record_dt: float = 0.05
    needle_radius: float = 0.2
    entry_point: tuple = (0.25, 0.0)
    # None: drawn per seed within exit_offset_range of the nominal exit.
    target_exit: Optional[tuple] = None
    exit_offset_range: tuple = (0.02, 0.06)
    drag_force: float = 2.0
    drag_radius: float = 0.15
    drag_jitter: float = 0.2
    insert_fraction: float = 0.8
    expert_gain: float = 0.5
    noise_std: float = 0.0
    markers: int = 6
    cameras: int = 1
    seed: int = 0
    steps: int = 140

    def __post_init__(self):
        rows, cols = self.grid
        if rows < 2 or cols < 2:
            raise ConfigError("grid must be at least 2x2")
        for name in ("dt", "record_dt", "needle_radius", "stiffness", "damping", "node_mass", "drag_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.expert_gain < 0 or self.noise_std < 0 or self.drag_force < 0:
            raise ConfigError("expert_gain, noise_std and drag_force must be nonnegative")
        if not 1 <= self.markers <= cols:
            raise ConfigError(f"markers must be between 1 and {cols}")
        if not 0 < self.insert_fraction <= 1:
            raise ConfigError("insert_fraction must be in (0, 1]")
        if 2 * self.needle_radius >= self.tissue_size[0] or self.needle_radius >= self.tissue_size[1]:
            raise ConfigError("needle does not fit inside the tissue block")

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.record_dt / self.dt)))

    @property
    def feature_dim(self) -> int:
        return 7 + 2 * self.markers


@dataclass
class TissueState:
    node_positions: np.ndarray
    node_velocities: np.ndarray
    needle_angle: float
    grasp_point: np.ndarray
    target_exit: np.ndarray
    drag_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.needle_angle <= math.pi:
            raise SimulationError(f"needle angle {self.needle_angle} outside [0, pi]")


def yaw_quaternion(theta: float) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation of ``theta`` about +z."""
    return np.array([math.cos(0.5 * theta), 0.0, 0.0, math.sin(0.5 * theta)])


class Tissue:
    """Mass-spring grid plus the needle and grasp geometry for one episode."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        rows, cols = cfg.grid
        width, height = cfg.tissue_size
        xs = np.linspace(0.0, width, cols)
        ys = np.linspace(-height, 0.0, rows)
        self.rows, self.cols = rows, cols
        self.ref = np.array([[x, y] for y in ys for x in xs])
        springs = []
        idx = lambda r, c: r * cols + c
        for r in range(rows):
            for c in range(cols):
                if c + 1 < cols:
                    springs.append((idx(r, c), idx(r, c + 1)))
                if r + 1 < rows:
                    springs.append((idx(r, c), idx(r + 1, c)))
                if r + 1 < rows and c + 1 < cols:
                    springs.append((idx(r, c), idx(r + 1, c + 1)))
                    springs.append((idx(r, c + 1), idx(r + 1, c)))
        self.springs = np.ascontiguousarray(springs, dtype=np.int32)
        d = self.ref[self.springs[:, 1]] - self.ref[self.springs[:, 0]]
        self.rest = np.ascontiguousarray(np.hypot(d[:, 0], d[:, 1]))
        self.top = np.array([idx(rows - 1, c) for c in range(cols)])
        self.grasped = self.top[-2:]
        free = np.ones(rows * cols, dtype=np.uint8)
        free[[idx(0, c) for c in range(cols)]] = 0
        free[self.grasped] = 0
        self.free = free
        self.marker_nodes = self.top[np.round(np.linspace(0, cols - 1, cfg.markers)).astype(int)]
        self.center = np.array(cfg.entry_point, dtype=float) + np.array([cfg.needle_radius, 0.0])
        self.grasp_ref = self.ref[self.grasped].mean(axis=0)
        self._force = np.zeros_like(self.ref)

    # geometry -----------------------------------------------------------

    def arc_point(self, phi: float) -> np.ndarray:
        R = self.cfg.needle_radius
        return self.center + R * np.array([-math.cos(phi), -math.sin(phi)])

    def surface_height(self, pos: np.ndarray, x: float) -> float:
        top = pos[self.top]
        return float(np.interp(x, top[:, 0], top[:, 1]))

    def exit_point(self, pos: np.ndarray) -> np.ndarray:
        """Where the needle arc crosses the deformed surface, by bisection."""
        R = self.cfg.needle_radius

        def gap(phi):
            p = self.arc_point(phi)
            return p[1] - self.surface_height(pos, p[0])

        lo, hi = 0.5 * math.pi, math.pi + _ARC_OVERSHOOT
        if gap(lo) >= 0 or gap(hi) <= 0:
            raise SimulationError("needle arc does not cross the tissue surface")
        while (hi - lo) * R > EXIT_BISECTION_TOL:
            mid = 0.5 * (lo + hi)
            if gap(mid) < 0:
                lo = mid
            else:
                hi = mid
        return self.arc_point(0.5 * (lo + hi))

    def surface_point(self, pos: np.ndarray, x_ref: float) -> np.ndarray:
        """Current position of the surface material point at reference abscissa ``x_ref``."""
        ref_x = self.ref[self.top, 0]
        j = int(np.clip(np.searchsorted(ref_x, x_ref) - 1, 0, self.cols - 2))
        f = (x_ref - ref_x[j]) / (ref_x[j + 1] - ref_x[j])
        a, b = pos[self.top[j]], pos[self.top[j + 1]]
        return (1.0 - f) * a + f * b

    def wrist_angle(self, pos: np.ndarray) -> float:
        a, b = pos[self.top[-3]], pos[self.top[-2]]
        return math.atan2(b[1] - a[1], b[0] - a[0])

    # dynamics -----------------------------------------------------------

    def drag(self, pos: np.ndarray, phi: float, scale: float) -> np.ndarray:
        ext = np.zeros_like(pos)
        cfg = self.cfg
        if cfg.drag_force == 0.0 or phi <= 0.0 or phi >= math.pi:
            return ext
        tip = self.arc_point(phi)
        tangent = np.array([math.sin(phi), -math.cos(phi)])
        dist = np.hypot(pos[:, 0] - tip[0], pos[:, 1] - tip[1])
        w = np.clip(1.0 - dist / cfg.drag_radius, 0.0, None) * self.free
        ext[:] = (cfg.drag_force * scale * math.sin(phi)) * w[:, None] * tangent
        return ext

    def substep(self, pos, vel, ext):
        cfg = self.cfg
        kernels.spring_substep(pos, vel, self.springs, self.rest, cfg.stiffness, cfg.damping,
                               ext, self.free, 1.0 / cfg.node_mass, cfg.dt, self._force)

    def energy(self, pos, vel) -> float:
        """Spring potential plus kinetic energy of the free nodes."""
        d = pos[self.springs[:, 1]] - pos[self.springs[:, 0]]
        stretch = np.hypot(d[:, 0], d[:, 1]) - self.rest
        kinetic = 0.5 * self.cfg.node_mass * float(np.sum(vel[self.free.astype(bool)] ** 2))
        return 0.5 * self.cfg.stiffness * float(stretch @ stretch) + kinetic


@dataclass
class Rollout:
    demo: Demonstration
    exit_errors: np.ndarray
    final_exit_error: float
    states: list = field(default_factory=list)


def initial_state(cfg: SimConfig, tissue: Optional[Tissue] = None) -> TissueState:
    tissue = tissue or Tissue(cfg)
    rng = np.random.default_rng([cfg.seed, 0])
    if cfg.target_exit is None:
        lo, hi = cfg.exit_offset_range
        offset = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
        target = np.array([cfg.entry_point[0] + 2 * cfg.needle_radius + offset, 0.0])
    else:
        target = np.array(cfg.target_exit, dtype=float)
    scale = 1.0 + cfg.drag_jitter * rng.uniform(-1.0, 1.0)
    return TissueState(tissue.ref.copy(), np.zeros_like(tissue.ref), 0.0,
                       tissue.grasp_ref.copy(), target, scale)


def extract_features(state: TissueState, cfg: SimConfig, tissue: Optional[Tissue] = None) -> np.ndarray:
    """Feature vector of width ``7 + 2 * markers``.

    Layout: needle tip xy, needle angle, target-exit mark xy (current
    position), marker displacements from rest (xy per marker), grasp xy.
    """
    tissue = tissue or Tissue(cfg)
    pos = state.node_positions
    tip = tissue.arc_point(state.needle_angle)
    mark = tissue.surface_point(pos, state.target_exit[0])
    disp = (pos[tissue.marker_nodes] - tissue.ref[tissue.marker_nodes]).reshape(-1)
    return np.concatenate([tip, [state.needle_angle], mark, disp, state.grasp_point])


def _pose(xy, theta):
    return np.concatenate([[xy[0], xy[1], 0.0], yaw_quaternion(theta)])


def _calibration(cfg: SimConfig) -> Optional[np.ndarray]:
    if cfg.cameras == 0:
        return None
    blocks = []
    for c in range(cfg.cameras):
        # virtual cameras spaced along x, looking down -z at the tissue
        ang = 0.3 * c
        rot = np.array([[math.cos(ang), -math.sin(ang), 0.0],
                        [math.sin(ang), math.cos(ang), 0.0],
                        [0.0, 0.0, 1.0]])
        trans = np.array([[0.5 * cfg.tissue_size[0] + 0.2 * c], [-0.1], [1.0]])
        blocks.append(np.hstack([rot, trans]).reshape(-1))
    return np.array(blocks)


def run_episode(cfg: SimConfig, demo_id: Optional[str] = None, keep_states: bool = False) -> Rollout:
    """Simulate one demonstration and report the exit error trace."""
    tissue = Tissue(cfg)
    state = initial_state(cfg, tissue)
    rng = np.random.default_rng([cfg.seed, 1])
    pos, vel = state.node_positions, state.node_velocities
    n_sweep = max(1, int(round(cfg.insert_fraction * cfg.steps)))
    dphi = math.pi / n_sweep
    n_sub = cfg.substeps

    grasp = state.grasp_point.copy()
    wrist = tissue.wrist_angle(pos)
    phi = 0.0
    feats, poses_l, poses_r, errors, states = [], [], [], [], []

    for t in range(cfg.steps + 1):
        state = TissueState(pos, vel, phi, grasp, state.target_exit, state.drag_scale)
        exit_w = tissue.exit_point(pos)
        mark_w = tissue.surface_point(pos, state.target_exit[0])
        errors.append(float(np.hypot(*(exit_w - mark_w))))
        poses_l.append(_pose(grasp, wrist))
        poses_r.append(_pose(tissue.arc_point(phi), phi))
        if t == cfg.steps:
            break
        feats.append(extract_features(state, cfg, tissue))
        if keep_states:
            states.append(TissueState(pos.copy(), vel.copy(), phi, grasp.copy(), state.target_exit, state.drag_scale))

        # expert command for arm 2: pull the mark onto the predicted exit
        cmd = cfg.expert_gain * (exit_w - mark_w)
        if cfg.noise_std > 0:
            cmd = cmd + rng.normal(0.0, cfg.noise_std, 2)
        next_grasp = grasp + cmd
        next_wrist = tissue.wrist_angle(pos)
        next_phi = min(math.pi, phi + dphi)

        for k in range(1, n_sub + 1):
            f = k / n_sub
            sub_phi = phi + f * (next_phi - phi)
            g = grasp + f * (next_grasp - grasp)
            target = tissue.ref[tissue.grasped] + (g - tissue.grasp_ref)
            vel[tissue.grasped] = (target - pos[tissue.grasped]) / cfg.dt
            pos[tissue.grasped] = target
            tissue.substep(pos, vel, tissue.drag(pos, sub_phi, state.drag_scale))
        if not np.all(np.isfinite(pos)):
            raise SimulationError(f"integration became non-finite at step {t}")
        grasp, wrist, phi = next_grasp, next_wrist, next_phi

    records = []
    for t in range(cfg.steps):
        s = np.concatenate([poses_l[t], poses_r[t]])
        dp = poses_l[t + 1][:3] - poses_l[t][:3]
        a = np.concatenate([dp, poses_l[t + 1][3:]])
        records.append(DemonstrationRecord(t=t, z=feats[t], s=s, a=a))
    demo = Demonstration(demo_id or f"demo_{cfg.seed:04d}", records, _calibration(cfg))
    errs = np.array(errors)
    return Rollout(demo, errs, float(errs[-1]), states)


def simulate_demo(cfg: SimConfig, demo_id: Optional[str] = None) -> Demonstration:
    return run_episode(cfg, demo_id).demo


def simulate_dataset(n: int, seed: int, base: Optional[SimConfig] = None) -> list:
    """``n`` demonstrations with per-demo seeds ``seed * 1000 + i``."""
    base = base or SimConfig(noise_std=DATASET_NOISE)
    return [simulate_demo(replace(base, seed=seed * 1000 + i), demo_id=f"demo_{i:04d}") for i in range(n)]
