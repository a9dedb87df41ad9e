"""HMM and mixture-HMM construction, validation, and transformation.

Probability rows must sum to one within ``ROW_TOL``; rows inside the
tolerance are silently renormalized, rows outside it are rejected.  Zero
entries present at build time are recorded as structural zeros: they are
never touched by estimation and do not count as free parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    GammaReferenceNotZero,
    MultichannelNotAllowed,
    NegativeProbability,
    RowAnnihilated,
    RowSumError,
)
from .seqdata import (
    MISSING,
    Alphabet,
    CovariateDesign,
    SequenceDataset,
    effective_size,
)

ROW_TOL = 1e-8


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HmmModel:
    """Hidden Markov model for C-channel categorical observations.

    ``*_mask`` arrays mark structural zeros (True = fixed at exactly 0).
    """

    state_names: tuple[str, ...]
    channel_names: tuple[str, ...]
    alphabets: tuple[Alphabet, ...]
    initial: np.ndarray = field(repr=False)
    transition: np.ndarray = field(repr=False)
    emissions: tuple[np.ndarray, ...] = field(repr=False)
    initial_mask: np.ndarray = field(repr=False)
    transition_mask: np.ndarray = field(repr=False)
    emission_masks: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        S = len(self.state_names)
        initial = _freeze(np.asarray(self.initial, dtype=float))
        transition = _freeze(np.asarray(self.transition, dtype=float))
        emissions = tuple(_freeze(np.asarray(b, dtype=float)) for b in self.emissions)
        imask = _freeze(np.asarray(self.initial_mask, dtype=bool))
        tmask = _freeze(np.asarray(self.transition_mask, dtype=bool))
        emasks = tuple(_freeze(np.asarray(m, dtype=bool)) for m in self.emission_masks)
        if initial.shape != (S,) or transition.shape != (S, S):
            raise DimensionMismatch(
                f"initial/transition shapes {initial.shape}/{transition.shape} "
                f"inconsistent with {S} states"
            )
        if len(emissions) != len(self.alphabets) or len(emissions) != len(self.channel_names):
            raise DimensionMismatch("one emission matrix per channel required")
        for c, (b, a) in enumerate(zip(emissions, self.alphabets)):
            if b.shape != (S, a.size):
                raise DimensionMismatch(
                    f"emission[{c}] shape {b.shape}, expected ({S}, {a.size})"
                )
        if imask.shape != initial.shape or tmask.shape != transition.shape:
            raise DimensionMismatch("mask shapes must match parameter shapes")
        for b, m in zip(emissions, emasks):
            if m.shape != b.shape:
                raise DimensionMismatch("mask shapes must match parameter shapes")
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "alphabets", tuple(self.alphabets))
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "emissions", emissions)
        object.__setattr__(self, "initial_mask", imask)
        object.__setattr__(self, "transition_mask", tmask)
        object.__setattr__(self, "emission_masks", emasks)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def with_params(self, initial=None, transition=None, emissions=None) -> "HmmModel":
        """Copy with updated parameter values; masks are preserved."""
        return replace(
            self,
            initial=self.initial if initial is None else initial,
            transition=self.transition if transition is None else transition,
            emissions=self.emissions if emissions is None else tuple(emissions),
        )


@dataclass(frozen=True)
class MixtureModel:
    """K cluster HMMs plus multinomial-logit coefficients for cluster priors.

    ``gamma`` is Q x K; the first column is the reference and fixed at zero.
    """

    clusters: tuple[HmmModel, ...]
    cluster_names: tuple[str, ...]
    gamma: np.ndarray = field(repr=False)
    design_names: tuple[str, ...] = ("(Intercept)",)

    def __post_init__(self):
        clusters = tuple(self.clusters)
        gamma = _freeze(np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "cluster_names", tuple(self.cluster_names))
        object.__setattr__(self, "design_names", tuple(self.design_names))
        object.__setattr__(self, "gamma", gamma)
        if not clusters:
            raise DimensionMismatch("mixture needs at least one cluster")
        if len(self.cluster_names) != len(clusters):
            raise DimensionMismatch("one name per cluster required")
        ref = clusters[0]
        for m in clusters[1:]:
            if m.n_channels != ref.n_channels or m.alphabets != ref.alphabets:
                raise DimensionMismatch("clusters must share channels and alphabets")
        if gamma.shape != (len(self.design_names), len(clusters)):
            raise DimensionMismatch(
                f"gamma shape {gamma.shape}, expected "
                f"({len(self.design_names)}, {len(clusters)})"
            )
        if np.any(gamma[:, 0] != 0.0):
            raise GammaReferenceNotZero("first gamma column is the reference; must be 0")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_states_total(self) -> int:
        return sum(m.n_states for m in self.clusters)

    @property
    def state_offsets(self) -> tuple[int, ...]:
        """Start index of each cluster's block in the combined state space."""
        sizes = [m.n_states for m in self.clusters]
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)[:-1]]))

    def cluster_of_state(self, state: int) -> int:
        offsets = self.state_offsets
        for k in range(self.n_clusters - 1, -1, -1):
            if state >= offsets[k]:
                return k
        raise IndexError(state)


@dataclass(frozen=True)
class ParamCount:
    p: int
    nobs: float


Model = Union[HmmModel, MixtureModel]


# ----------------------------------------------------------------------
# builders
# ----------------------------------------------------------------------


def _clean_row(vec, where: str, row_idx: int) -> np.ndarray:
    v = np.asarray(vec, dtype=float).copy()
    if np.any(v < 0):
        raise NegativeProbability(f"{where} row {row_idx} has a negative entry")
    total = float(v.sum())
    if abs(total - 1.0) > ROW_TOL:
        raise RowSumError(where, row_idx, total)
    # sums already within float roundoff of 1 stay untouched, so revalidating
    # a built model reproduces it bit for bit
    if abs(total - 1.0) > 1e-12:
        v /= total
    return v


def _data_meta(data_meta) -> tuple[tuple[Alphabet, ...], tuple[str, ...]]:
    if isinstance(data_meta, SequenceDataset):
        return data_meta.alphabets, data_meta.channel_names
    if isinstance(data_meta, Alphabet):
        return (data_meta,), ("Channel 1",)
    alphabets = tuple(data_meta)
    names = tuple(f"Channel {c + 1}" for c in range(len(alphabets)))
    return alphabets, names


def build_hmm(
    data_meta,
    initial=None,
    transition=None,
    emissions=None,
    n_states: Optional[int] = None,
    state_names: Optional[Sequence[str]] = None,
    channel_names: Optional[Sequence[str]] = None,
    rng_seed: Optional[int] = None,
) -> HmmModel:
    """Construct a validated HMM from explicit parameters or a random start.

    Either pass the full (initial, transition, emissions) set, or pass
    ``n_states`` alone to draw every row from a symmetric Dirichlet(1)
    seeded by ``rng_seed``.  Zero entries in supplied parameters become
    structural zeros; random initialization generates dense rows.

    Parameters
    ----------
    data_meta : SequenceDataset or sequence of Alphabet
        Channel alphabets (and names, when a dataset is given).
    emissions : matrix or list of matrices
        One S x M_c row-stochastic matrix per channel; a bare matrix is
        accepted for single-channel models.
    """
    alphabets, default_channels = _data_meta(data_meta)
    if channel_names is None:
        channel_names = default_channels
    if len(channel_names) != len(alphabets):
        raise DimensionMismatch("one channel name per alphabet required")

    have_params = initial is not None or transition is not None or emissions is not None
    if have_params:
        if initial is None or transition is None or emissions is None:
            raise DimensionMismatch(
                "initial, transition, and emissions must be given together"
            )
        if isinstance(emissions, np.ndarray) and emissions.ndim == 2:
            emissions = [emissions]
        elif isinstance(emissions, (list, tuple)) and emissions and np.ndim(emissions[0]) != 2:
            emissions = [np.asarray(emissions)]
        initial = np.asarray(initial, dtype=float)
        transition = np.asarray(transition, dtype=float)
        S = initial.shape[0]
    else:
        if n_states is None:
            raise DimensionMismatch("give either full parameters or n_states")
        S = int(n_states)
        rng = np.random.default_rng(rng_seed)
        initial = rng.dirichlet(np.ones(S))
        transition = rng.dirichlet(np.ones(S), size=S)
        emissions = [rng.dirichlet(np.ones(a.size), size=S) for a in alphabets]

    if transition.shape != (S, S):
        raise DimensionMismatch(f"transition shape {transition.shape}, expected ({S}, {S})")
    if len(emissions) != len(alphabets):
        raise DimensionMismatch(
            f"{len(emissions)} emission matrices for {len(alphabets)} channels"
        )

    initial = _clean_row(initial, "initial", 0)
    transition = np.vstack(
        [_clean_row(transition[s], "transition", s) for s in range(S)]
    )
    cleaned = []
    for c, b in enumerate(emissions):
        b = np.asarray(b, dtype=float)
        if b.shape != (S, alphabets[c].size):
            raise DimensionMismatch(
                f"emission[{c}] shape {b.shape}, expected ({S}, {alphabets[c].size})"
            )
        cleaned.append(np.vstack([_clean_row(b[s], f"emission[{c}]", s) for s in range(S)]))

    if state_names is None:
        state_names = tuple(f"State {s + 1}" for s in range(S))
    return HmmModel(
        state_names=tuple(state_names),
        channel_names=tuple(channel_names),
        alphabets=alphabets,
        initial=initial,
        transition=transition,
        emissions=tuple(cleaned),
        initial_mask=initial == 0.0,
        transition_mask=transition == 0.0,
        emission_masks=tuple(b == 0.0 for b in cleaned),
    )


def build_mm(data: SequenceDataset) -> HmmModel:
    """Markov model: states mirror the observed alphabet, emissions are identity.

    Initial probabilities are the relative frequencies of each subject's
    first observed state; transition probabilities are normalized counts of
    adjacent observed pairs (pairs spanning a missing gap are skipped).
    States without outgoing transitions fall back to a self-loop.
    """
    if data.n_channels != 1:
        raise MultichannelNotAllowed("the data must be in a single-channel format")
    ch = data.channels[0]
    M = ch.alphabet.size
    codes = ch.codes

    first_counts = np.zeros(M)
    for i in range(data.n_subjects):
        observed = codes[i][codes[i] != MISSING]
        if observed.size:
            first_counts[observed[0]] += 1.0
    if first_counts.sum() > 0:
        initial = first_counts / first_counts.sum()
    else:
        initial = np.full(M, 1.0 / M)

    trans_counts = np.zeros((M, M))
    src, dst = codes[:, :-1], codes[:, 1:]
    both = (src != MISSING) & (dst != MISSING)
    np.add.at(trans_counts, (src[both], dst[both]), 1.0)
    transition = np.zeros((M, M))
    for s in range(M):
        total = trans_counts[s].sum()
        if total > 0:
            transition[s] = trans_counts[s] / total
        else:
            transition[s, s] = 1.0

    identity = np.eye(M)
    return HmmModel(
        state_names=ch.alphabet.labels,
        channel_names=(ch.name,),
        alphabets=(ch.alphabet,),
        initial=initial,
        transition=transition,
        emissions=(identity,),
        initial_mask=initial == 0.0,
        transition_mask=transition == 0.0,
        emission_masks=(identity == 0.0,),
    )


def build_mhmm(
    clusters: Sequence,
    covariates: Optional[CovariateDesign] = None,
    gamma=None,
    cluster_names: Optional[Sequence[str]] = None,
    alphabets: Optional[Sequence[Alphabet]] = None,
    channel_names: Optional[Sequence[str]] = None,
) -> MixtureModel:
    """Assemble a mixture of HMMs.

    ``clusters`` may hold ready-built ``HmmModel`` objects or raw
    ``(initial, transition, emissions)`` triples (the latter require
    ``alphabets``).  Without covariates the design is intercept-only;
    without ``gamma`` all coefficients start at zero (uniform priors).
    """
    built = []
    for spec in clusters:
        if isinstance(spec, HmmModel):
            built.append(spec)
        else:
            if alphabets is None:
                raise DimensionMismatch("raw cluster triples require alphabets")
            init, trans, emis = spec
            built.append(
                build_hmm(
                    alphabets,
                    initial=init,
                    transition=trans,
                    emissions=emis,
                    channel_names=channel_names,
                )
            )
    K = len(built)
    if cluster_names is None:
        cluster_names = tuple(f"Cluster {k + 1}" for k in range(K))
    design_names = covariates.names if covariates is not None else ("(Intercept)",)
    if gamma is None:
        gamma = np.zeros((len(design_names), K))
    return MixtureModel(
        clusters=tuple(built),
        cluster_names=tuple(cluster_names),
        gamma=np.asarray(gamma, dtype=float),
        design_names=design_names,
    )


def build_restricted_mixture(
    kind: str,
    data_meta,
    n_clusters: int,
    covariates: Optional[CovariateDesign] = None,
    rng_seed: Optional[int] = None,
) -> MixtureModel:
    """Build an MMM (identity emissions) or LCM (one state per cluster).

    MMM clusters get free Dirichlet(1) initial and transition rows with
    fixed identity emissions; they require single-channel data.  LCM
    clusters have one hidden state, a transition fixed to the scalar 1,
    and free emission rows; any channel count is allowed.
    """
    kind = kind.lower()
    if kind not in ("mmm", "lcm"):
        raise DimensionMismatch(f"unknown restricted mixture kind {kind!r}")
    alphabets, channel_names = _data_meta(data_meta)
    rng = np.random.default_rng(rng_seed)
    clusters = []
    if kind == "mmm":
        if len(alphabets) != 1:
            raise MultichannelNotAllowed("the data must be in a single-channel format")
        M = alphabets[0].size
        identity = np.eye(M)
        for _ in range(n_clusters):
            clusters.append(
                HmmModel(
                    state_names=alphabets[0].labels,
                    channel_names=channel_names,
                    alphabets=alphabets,
                    initial=rng.dirichlet(np.ones(M)),
                    transition=rng.dirichlet(np.ones(M), size=M),
                    emissions=(identity,),
                    initial_mask=np.zeros(M, dtype=bool),
                    transition_mask=np.zeros((M, M), dtype=bool),
                    emission_masks=(identity == 0.0,),
                )
            )
    else:
        for _ in range(n_clusters):
            clusters.append(
                HmmModel(
                    state_names=("State 1",),
                    channel_names=channel_names,
                    alphabets=alphabets,
                    initial=np.ones(1),
                    transition=np.ones((1, 1)),
                    emissions=tuple(
                        rng.dirichlet(np.ones(a.size), size=1) for a in alphabets
                    ),
                    initial_mask=np.zeros(1, dtype=bool),
                    transition_mask=np.zeros((1, 1), dtype=bool),
                    emission_masks=tuple(
                        np.zeros((1, a.size), dtype=bool) for a in alphabets
                    ),
                )
            )
    return build_mhmm(clusters, covariates=covariates)


# ----------------------------------------------------------------------
# mixture weights and cluster combination
# ----------------------------------------------------------------------


def mixture_weights(gamma: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Multinomial-logit prior cluster probabilities, overflow-safe.

    Row i is softmax(x_i' gamma) with the first column as zero reference.
    """
    logits = X @ gamma
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w


def combine_clusters(
    mix: MixtureModel, design: CovariateDesign
) -> tuple[HmmModel, np.ndarray]:
    """Embed a mixture as one HMM with a block-diagonal transition matrix.

    Transitions between clusters are impossible: off-diagonal blocks are
    exact structural zeros.  Returns the combined model together with the
    per-subject initial vectors (w_i1*pi^1, ..., w_iK*pi^K).
    """
    S_total = mix.n_states_total
    offsets = mix.state_offsets
    transition = np.zeros((S_total, S_total))
    tmask = np.ones((S_total, S_total), dtype=bool)
    initial_mask = np.concatenate([m.initial_mask for m in mix.clusters])
    state_names = []
    for k, m in enumerate(mix.clusters):
        o = offsets[k]
        transition[o : o + m.n_states, o : o + m.n_states] = m.transition
        tmask[o : o + m.n_states, o : o + m.n_states] = m.transition_mask
        state_names.extend(f"{mix.cluster_names[k]}:{s}" for s in m.state_names)
    emissions = tuple(
        np.vstack([m.emissions[c] for m in mix.clusters])
        for c in range(mix.clusters[0].n_channels)
    )
    emission_masks = tuple(
        np.vstack([m.emission_masks[c] for m in mix.clusters])
        for c in range(mix.clusters[0].n_channels)
    )
    w = mixture_weights(mix.gamma, design.X)
    subject_initials = np.hstack(
        [w[:, k : k + 1] * m.initial[None, :] for k, m in enumerate(mix.clusters)]
    )
    combined = HmmModel(
        state_names=tuple(state_names),
        channel_names=mix.clusters[0].channel_names,
        alphabets=mix.clusters[0].alphabets,
        initial=subject_initials.mean(axis=0),
        transition=transition,
        emissions=emissions,
        initial_mask=initial_mask,
        transition_mask=tmask,
        emission_masks=emission_masks,
    )
    return combined, subject_initials


def separate_clusters(mix: MixtureModel) -> list[HmmModel]:
    """Return the K cluster submodels as standalone HMMs."""
    return list(mix.clusters)


# ----------------------------------------------------------------------
# trimming and parameter counting
# ----------------------------------------------------------------------


def _trim_row(row, mask, tol, where, idx):
    drop = row < tol
    if np.all(drop):
        raise RowAnnihilated(f"{where} row {idx}: every entry below tol={tol}")
    if not np.any(drop):
        return row, mask
    new_row = np.where(drop, 0.0, row)
    removed = row[drop & ~mask].sum()
    if removed > 0:
        new_row = new_row / new_row.sum()
    return new_row, mask | drop


def _trim_hmm(m: HmmModel, tol: float) -> HmmModel:
    if tol == 0:
        return m
    initial, imask = _trim_row(m.initial, m.initial_mask, tol, "initial", 0)
    t_rows, t_masks = zip(
        *(
            _trim_row(m.transition[s], m.transition_mask[s], tol, "transition", s)
            for s in range(m.n_states)
        )
    )
    emissions, emasks = [], []
    for c, b in enumerate(m.emissions):
        rows, masks = zip(
            *(
                _trim_row(b[s], m.emission_masks[c][s], tol, f"emission[{c}]", s)
                for s in range(m.n_states)
            )
        )
        emissions.append(np.vstack(rows))
        emasks.append(np.vstack(masks))
    return HmmModel(
        state_names=m.state_names,
        channel_names=m.channel_names,
        alphabets=m.alphabets,
        initial=initial,
        transition=np.vstack(t_rows),
        emissions=tuple(emissions),
        initial_mask=imask,
        transition_mask=np.vstack(t_masks),
        emission_masks=tuple(emasks),
    )


def trim_model(m: Model, tol: float) -> Model:
    """Zero out probabilities below ``tol``, mark them structural, renormalize.

    ``tol=0`` returns the model unchanged.  Raises ``RowAnnihilated`` if a
    whole row falls below the threshold.
    """
    if tol < 0:
        raise DimensionMismatch("tol must be >= 0")
    if isinstance(m, MixtureModel):
        return replace(m, clusters=tuple(_trim_hmm(c, tol) for c in m.clusters))
    return _trim_hmm(m, tol)


def _row_free(mask_row) -> int:
    free = int(np.sum(~mask_row))
    return max(free - 1, 0)


def _hmm_param_count(m: HmmModel) -> int:
    p = _row_free(m.initial_mask)
    p += sum(_row_free(m.transition_mask[s]) for s in range(m.n_states))
    for mask in m.emission_masks:
        p += sum(_row_free(mask[s]) for s in range(m.n_states))
    return p


def count_parameters(m: Model, data: SequenceDataset) -> ParamCount:
    """Free parameter count (sum-to-one and structural-zero adjusted) and
    the missing-adjusted data size used by information criteria."""
    if isinstance(m, MixtureModel):
        p = sum(_hmm_param_count(c) for c in m.clusters)
        p += len(m.design_names) * (m.n_clusters - 1)
    else:
        p = _hmm_param_count(m)
    return ParamCount(p=p, nobs=effective_size(data))


# ----------------------------------------------------------------------
# serialization (probabilities as decimal text, >= 17 significant digits)
# ----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_array(a: np.ndarray):
    if a.ndim == 1:
        return [_fmt(x) for x in a]
    return [_fmt_array(row) for row in a]


def _parse_array(rows) -> np.ndarray:
    return np.asarray(rows, dtype=float)


def _mask_array(a: np.ndarray):
    return np.asarray(a, dtype=int).tolist()


def _hmm_to_json(m: HmmModel) -> dict:
    return {
        "type": "hmm",
        "state_names": list(m.state_names),
        "channel_names": list(m.channel_names),
        "alphabets": [
            {"labels": list(a.labels), "missing_token": a.missing_token}
            for a in m.alphabets
        ],
        "initial": _fmt_array(m.initial),
        "transition": _fmt_array(m.transition),
        "emissions": [_fmt_array(b) for b in m.emissions],
        "zero_mask": {
            "initial": _mask_array(m.initial_mask),
            "transition": _mask_array(m.transition_mask),
            "emissions": [_mask_array(mask) for mask in m.emission_masks],
        },
    }


def _hmm_from_json(doc: dict) -> HmmModel:
    alphabets = tuple(
        Alphabet(tuple(a["labels"]), a.get("missing_token", "*"))
        for a in doc["alphabets"]
    )
    masks = doc["zero_mask"]
    return HmmModel(
        state_names=tuple(doc["state_names"]),
        channel_names=tuple(doc["channel_names"]),
        alphabets=alphabets,
        initial=_parse_array(doc["initial"]),
        transition=_parse_array(doc["transition"]),
        emissions=tuple(_parse_array(b) for b in doc["emissions"]),
        initial_mask=np.asarray(masks["initial"], dtype=bool),
        transition_mask=np.asarray(masks["transition"], dtype=bool),
        emission_masks=tuple(np.asarray(mk, dtype=bool) for mk in masks["emissions"]),
    )


def model_to_json(m: Model) -> dict:
    """Lossless JSON form of a model (floats rendered with 17 significant digits)."""
    if isinstance(m, MixtureModel):
        return {
            "type": "mhmm",
            "cluster_names": list(m.cluster_names),
            "covariate_names": list(m.design_names),
            "gamma": _fmt_array(m.gamma),
            "clusters": [_hmm_to_json(c) for c in m.clusters],
        }
    return _hmm_to_json(m)


def model_from_json(doc: dict) -> Model:
    if doc.get("type") == "mhmm":
        return MixtureModel(
            clusters=tuple(_hmm_from_json(c) for c in doc["clusters"]),
            cluster_names=tuple(doc["cluster_names"]),
            gamma=_parse_array(doc["gamma"]),
            design_names=tuple(doc["covariate_names"]),
        )
    return _hmm_from_json(doc)
