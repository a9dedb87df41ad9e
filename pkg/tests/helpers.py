"""Shared generators for randomized tests."""

import json

import numpy as np

from markovseq import (
    Alphabet,
    Channel,
    CovariateDesign,
    SequenceDataset,
    build_hmm,
    build_mhmm,
)
from markovseq.seqdata import MISSING


def make_alphabets(sizes):
    return tuple(
        Alphabet(tuple(f"c{c}m{j}" for j in range(m))) for c, m in enumerate(sizes)
    )


def random_hmm(rng, n_states, sizes, left_to_right=False):
    alphabets = make_alphabets(sizes)
    S = n_states
    initial = rng.dirichlet(np.ones(S))
    if left_to_right:
        transition = np.zeros((S, S))
        for s in range(S):
            transition[s, s:] = rng.dirichlet(np.ones(S - s))
    else:
        transition = rng.dirichlet(np.ones(S), size=S)
    emissions = [rng.dirichlet(np.ones(m), size=S) for m in sizes]
    return build_hmm(alphabets, initial=initial, transition=transition, emissions=emissions)


def random_dataset(rng, model, n_subjects, n_time, missing_rate=0.0):
    """Codes drawn uniformly over each alphabet; independent of the model."""
    channels = []
    for name, alpha in zip(model.channel_names, model.alphabets):
        codes = rng.integers(0, alpha.size, size=(n_subjects, n_time))
        if missing_rate > 0:
            gaps = rng.random((n_subjects, n_time)) < missing_rate
            codes = np.where(gaps, MISSING, codes)
        channels.append(Channel(name, alpha, codes))
    ids = tuple(f"s{i + 1}" for i in range(n_subjects))
    return SequenceDataset(tuple(channels), ids)


def random_mixture(rng, n_clusters, n_states, sizes, n_subjects, n_covariates=1):
    """A random mixture plus a matching covariate design for n_subjects."""
    clusters = [random_hmm(rng, n_states, sizes) for _ in range(n_clusters)]
    names = ("(Intercept)",) + tuple(f"x{q}" for q in range(1, n_covariates))
    X = np.ones((n_subjects, n_covariates))
    if n_covariates > 1:
        X[:, 1:] = rng.normal(size=(n_subjects, n_covariates - 1))
    design = CovariateDesign(names, X)
    gamma = rng.normal(scale=0.8, size=(n_covariates, n_clusters))
    gamma[:, 0] = 0.0
    mix = build_mhmm(clusters, covariates=design, gamma=gamma)
    return mix, design


def write_manifest(tmp_path, channels, covariate_rows=None, covariate_names=None):
    """Write wide CSVs plus a manifest; channels are (name, labels, rows-of-tokens)."""
    entries = []
    n_time = len(channels[0][2][0])
    for name, labels, rows in channels:
        csv_path = tmp_path / f"{name}.csv"
        lines = ["id," + ",".join(f"t{t + 1}" for t in range(n_time))]
        for i, row in enumerate(rows):
            lines.append(f"s{i + 1}," + ",".join(row))
        csv_path.write_text("\n".join(lines) + "\n")
        entries.append(
            {"name": name, "csv": f"{name}.csv", "alphabet": list(labels), "missing_token": "*"}
        )
    manifest = {"id_column": "id", "channels": entries}
    if covariate_rows is not None:
        lines = ["id," + ",".join(covariate_names)]
        for i, row in enumerate(covariate_rows):
            lines.append(f"s{i + 1}," + ",".join(str(v) for v in row))
        (tmp_path / "covariates.csv").write_text("\n".join(lines) + "\n")
        manifest["covariates_csv"] = "covariates.csv"
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
