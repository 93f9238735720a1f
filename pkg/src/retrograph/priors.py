"""Graph-derived attention priors at SMILES-token resolution."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from retrograph.smiles import MolGraph, TokenSequence

INF = np.inf
HOPS = (1, 2, 3, 4)


class ShapeMismatch(ValueError):
    pass


class DuplicateMapNumber(ValueError):
    pass


class BiasMode(str, Enum):
    HARD = "hard"
    GAUSSIAN = "gaussian"
    OFF = "off"


@dataclass(frozen=True)
class DistanceMatrix:
    """Shortest-path hop counts; ``inf`` between different components."""

    d: np.ndarray

    @property
    def size(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True)
class HopMasks:
    m: dict[int, np.ndarray]

    def __getitem__(self, hop: int) -> np.ndarray:
        return self.m[hop]


@dataclass(frozen=True)
class IntraBiasConfig:
    mode: BiasMode = BiasMode.GAUSSIAN
    weights: tuple[float, float, float, float] = (1.0, 0.5, 0.25, 0.125)
    sigma: float = 1.0
    lambda_intra: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", BiasMode(self.mode))
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if len(self.weights) != len(HOPS):
            raise ValueError("need one weight per hop distance 1..4")


@dataclass(frozen=True)
class IntraBias:
    b: np.ndarray
    mode: BiasMode
    weights: tuple[float, ...]
    sigma: float
    lambda_intra: float


@dataclass(frozen=True)
class CrossAlignment:
    b: np.ndarray
    lambda_cross: float = 1.0


def all_pairs_distance(graph: MolGraph) -> DistanceMatrix:
    n = len(graph.atoms)
    d = np.full((n, n), INF)
    adj = graph.adjacency
    for src in range(n):
        d[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if d[src, v] == INF:
                    d[src, v] = d[src, u] + 1
                    queue.append(v)
    return DistanceMatrix(d)


def hop_masks(dist: DistanceMatrix) -> HopMasks:
    return HopMasks({h: (dist.d == h).astype(np.uint8) for h in HOPS})


def atom_bias(dist: DistanceMatrix, cfg: IntraBiasConfig) -> np.ndarray:
    """Atom-resolution bias matrix before lifting to tokens."""
    d = dist.d
    if cfg.mode is BiasMode.GAUSSIAN:
        with np.errstate(over="ignore"):
            return np.exp(-(d**2) / (2.0 * cfg.sigma**2))
    if cfg.mode is BiasMode.HARD:
        masks = hop_masks(dist)
        out = np.zeros_like(d)
        for w, h in zip(cfg.weights, HOPS):
            out += w * masks[h]
        return out
    return np.zeros_like(d)


def lift_to_tokens(seq: TokenSequence, atom_matrix: np.ndarray) -> np.ndarray:
    """Scatter an atom x atom matrix onto token positions; syntax tokens get 0."""
    if atom_matrix.shape != (seq.atom_count, seq.atom_count):
        raise ShapeMismatch(
            f"{seq.atom_count} atom tokens but a {atom_matrix.shape} atom matrix"
        )
    pos = np.asarray(seq.atom_positions, dtype=int)
    out = np.zeros((len(seq), len(seq)))
    out[np.ix_(pos, pos)] = atom_matrix
    return out


def intra_bias(seq: TokenSequence, dist: DistanceMatrix, cfg: IntraBiasConfig) -> IntraBias:
    """Token-level B_intra, unscaled; the attention layer applies lambda."""
    b = lift_to_tokens(seq, atom_bias(dist, cfg))
    return IntraBias(b, cfg.mode, tuple(cfg.weights), cfg.sigma, cfg.lambda_intra)


def _map_positions(graph: MolGraph, seq: TokenSequence) -> dict[int, int]:
    pos = seq.atom_positions
    out: dict[int, int] = {}
    for i, atom in enumerate(graph.atoms):
        if atom.map_number is None:
            continue
        if atom.map_number in out:
            raise DuplicateMapNumber(f"map number {atom.map_number} used twice")
        out[atom.map_number] = pos[i]
    return out


def cross_alignment(
    product: tuple[MolGraph, TokenSequence],
    reactants: tuple[MolGraph, TokenSequence],
    lambda_cross: float = 1.0,
) -> CrossAlignment:
    """Binary product-token x reactant-token matrix of atom-mapped pairs."""
    p_graph, p_seq = product
    r_graph, r_seq = reactants
    p_maps = _map_positions(p_graph, p_seq)
    r_maps = _map_positions(r_graph, r_seq)
    b = np.zeros((len(p_seq), len(r_seq)))
    for m, i in p_maps.items():
        j = r_maps.get(m)
        if j is not None:
            b[i, j] = 1.0
    return CrossAlignment(b, lambda_cross)
