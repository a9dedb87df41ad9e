"""Random model parameters and synthetic datasets for recovery studies.

Reproducibility rule: subject i draws from ``default_rng([seed, i])``, an
independent substream, so per-subject simulation can be parallelized or
reordered without changing output.  Within a subject the draw order is:
cluster label (mixtures with K > 1 only), one uniform per time point for
the hidden path, then per channel one uniform per time point for the
emission and, when a missing rate is set, one more per time point for the
missingness mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import HmmModel, MixtureModel, build_mhmm, mixture_weights
from .seqdata import (
    MISSING,
    Alphabet,
    Channel,
    CovariateDesign,
    SequenceDataset,
)


@dataclass(frozen=True)
class SimSpec:
    """Dimensions and seed for a simulated model/dataset pair."""

    n_subjects: int
    n_time: int
    seed: int
    n_states: int
    n_symbols: tuple[int, ...]
    n_clusters: int = 1
    left_to_right: bool = False

    def __post_init__(self):
        if min(self.n_subjects, self.n_time, self.n_states, self.n_clusters) < 1:
            raise ValueError("all dimensions must be positive")
        if any(m < 1 for m in self.n_symbols):
            raise ValueError("every channel needs at least one symbol")


def _default_alphabets(n_symbols) -> tuple[Alphabet, ...]:
    return tuple(
        Alphabet(tuple(f"m{j + 1}" for j in range(m))) for m in n_symbols
    )


def _random_transition(rng, S: int, left_to_right: bool):
    if not left_to_right:
        A = rng.dirichlet(np.ones(S), size=S)
        return A, A == 0.0
    A = np.zeros((S, S))
    mask = np.ones((S, S), dtype=bool)
    for s in range(S):
        A[s, s:] = rng.dirichlet(np.ones(S - s))
        mask[s, s:] = False
    return A, mask


def _random_hmm(rng, spec: SimSpec, alphabets) -> HmmModel:
    S = spec.n_states
    initial = rng.dirichlet(np.ones(S))
    transition, tmask = _random_transition(rng, S, spec.left_to_right)
    emissions = tuple(rng.dirichlet(np.ones(a.size), size=S) for a in alphabets)
    return HmmModel(
        state_names=tuple(f"State {s + 1}" for s in range(S)),
        channel_names=tuple(f"Channel {c + 1}" for c in range(len(alphabets))),
        alphabets=alphabets,
        initial=initial,
        transition=transition,
        emissions=emissions,
        initial_mask=np.zeros(S, dtype=bool),
        transition_mask=tmask,
        emission_masks=tuple(np.zeros((S, a.size), dtype=bool) for a in alphabets),
    )


def simulate_parameters(spec: SimSpec):
    """Draw a random model: Dirichlet(1) rows, seeded, honoring structure.

    With ``left_to_right`` the strict lower triangle of every transition
    matrix is a structural zero.  ``n_clusters > 1`` produces a mixture
    with an intercept-only design and standard-normal gamma coefficients
    (reference column zero).
    """
    rng = np.random.default_rng(spec.seed)
    alphabets = _default_alphabets(spec.n_symbols)
    if spec.n_clusters == 1:
        return _random_hmm(rng, spec, alphabets)
    clusters = [_random_hmm(rng, spec, alphabets) for _ in range(spec.n_clusters)]
    gamma = rng.normal(size=(1, spec.n_clusters))
    gamma[:, 0] = 0.0
    return build_mhmm(clusters, gamma=gamma)


def _cumulative_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise CDF with the tail pinned to 1 at the last positive entry.

    Keeps zero-probability entries exactly unreachable under inverse-CDF
    sampling and guards against cumulative-sum drift below 1.
    """
    p = np.atleast_2d(p)
    c = np.cumsum(p, axis=1)
    for row, probs in zip(c, p):
        last = np.nonzero(probs)[0][-1]
        row[last:] = 1.0
    return c


def _draw(cum_row: np.ndarray, u) -> np.ndarray:
    # index of the first cumulative value exceeding u; ties skip zero states
    return np.searchsorted(cum_row, u, side="right")


def _simulate_subject(rng, cum_init, cum_trans, cum_emis, n_time, missing_rate):
    u = rng.random(n_time)
    z = np.empty(n_time, dtype=np.int64)
    z[0] = _draw(cum_init[0], u[0])
    for t in range(1, n_time):
        z[t] = _draw(cum_trans[z[t - 1]], u[t])
    obs = []
    for cum_b in cum_emis:
        v = rng.random(n_time)
        rows = cum_b[z]  # (T, M)
        codes = (v[:, None] >= rows).sum(axis=1)
        if missing_rate > 0:
            gap = rng.random(n_time) < missing_rate
            codes = np.where(gap, MISSING, codes)
        obs.append(codes)
    return z, obs


def _assemble_dataset(model: HmmModel, all_obs, n_subjects) -> SequenceDataset:
    channels = tuple(
        Channel(name, alpha, np.vstack([obs[c] for obs in all_obs]))
        for c, (name, alpha) in enumerate(zip(model.channel_names, model.alphabets))
    )
    ids = tuple(f"s{i + 1}" for i in range(n_subjects))
    return SequenceDataset(channels, ids)


def simulate_hmm_data(
    model: HmmModel,
    n_subjects: int,
    n_time: int,
    seed: int,
    missing_rate: float = 0.0,
) -> tuple[SequenceDataset, np.ndarray]:
    """Sample observations and hidden paths from a fixed HMM."""
    cum_init = _cumulative_rows(model.initial)
    cum_trans = _cumulative_rows(model.transition)
    cum_emis = [_cumulative_rows(b) for b in model.emissions]
    paths = np.empty((n_subjects, n_time), dtype=np.int64)
    all_obs = []
    for i in range(n_subjects):
        rng = np.random.default_rng([seed, i])
        z, obs = _simulate_subject(rng, cum_init, cum_trans, cum_emis, n_time, missing_rate)
        paths[i] = z
        all_obs.append(obs)
    return _assemble_dataset(model, all_obs, n_subjects), paths


def simulate_mhmm_data(
    mix: MixtureModel,
    design: Optional[CovariateDesign],
    n_subjects: int,
    n_time: int,
    seed: int,
    missing_rate: float = 0.0,
) -> tuple[SequenceDataset, np.ndarray, np.ndarray]:
    """Sample from a mixture: cluster by covariate prior, then that cluster's HMM.

    Returns the dataset, hidden paths in the combined state space (cluster
    blocks stacked), and 0-based cluster labels.  With a single cluster the
    output is identical to ``simulate_hmm_data`` on that cluster.
    """
    if design is None:
        design = CovariateDesign.intercept(n_subjects)
    if design.n_subjects != n_subjects:
        raise ValueError("design rows must match n_subjects")
    K = mix.n_clusters
    w = mixture_weights(mix.gamma, design.X)
    cum_w = _cumulative_rows(w)
    offsets = mix.state_offsets
    tables = [
        (
            _cumulative_rows(sub.initial),
            _cumulative_rows(sub.transition),
            [_cumulative_rows(b) for b in sub.emissions],
        )
        for sub in mix.clusters
    ]
    paths = np.empty((n_subjects, n_time), dtype=np.int64)
    labels = np.empty(n_subjects, dtype=np.int64)
    all_obs = []
    for i in range(n_subjects):
        rng = np.random.default_rng([seed, i])
        k = 0 if K == 1 else int(_draw(cum_w[i], rng.random()))
        labels[i] = k
        cum_init, cum_trans, cum_emis = tables[k]
        z, obs = _simulate_subject(rng, cum_init, cum_trans, cum_emis, n_time, missing_rate)
        paths[i] = z + offsets[k]
        all_obs.append(obs)
    data = _assemble_dataset(mix.clusters[0], all_obs, n_subjects)
    return data, paths, labels
