"""Multichannel categorical sequence data: containers, ingestion, transforms.

A dataset holds N subjects observed over T time points on C parallel
channels.  Each channel has its own alphabet of categorical labels;
observations are stored as integer codes with ``MISSING`` (-1) marking
unobserved cells.  Sequences of unequal length are represented by leading
or trailing missing codes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DuplicateLabel,
    MissingCovariate,
    MissingTokenCollision,
    ShapeMismatch,
    UnknownToken,
)

#: Sentinel code for a missing observation; never a valid alphabet code.
MISSING = -1

INTERCEPT_NAME = "(Intercept)"


@dataclass(frozen=True)
class Alphabet:
    """Ordered set of categorical labels plus a reserved missing token.

    Label order is significant: it fixes the integer coding and the
    reporting/plotting order of states.
    """

    labels: tuple[str, ...]
    missing_token: str = "*"

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) == 0:
            raise DuplicateLabel("alphabet needs at least one label")
        if len(set(labels)) != len(labels):
            raise DuplicateLabel(f"duplicate labels in alphabet: {labels}")
        if self.missing_token in labels:
            raise MissingTokenCollision(
                f"missing token {self.missing_token!r} collides with a label"
            )

    @property
    def size(self) -> int:
        return len(self.labels)

    def code(self, token: str) -> int:
        """Map a token to its integer code; the missing token maps to MISSING."""
        if token == self.missing_token:
            return MISSING
        try:
            return self.labels.index(token)
        except ValueError:
            raise KeyError(token) from None

    def token(self, code: int) -> str:
        return self.missing_token if code == MISSING else self.labels[code]


def define_alphabet(labels: Sequence[str], missing_token: str = "*") -> Alphabet:
    """Build an alphabet assigning codes 0..M-1 in the given label order."""
    return Alphabet(tuple(labels), missing_token)


@dataclass(frozen=True)
class Channel:
    """One named channel: an alphabet and an N x T matrix of codes."""

    name: str
    alphabet: Alphabet
    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.ndim != 2:
            raise ShapeMismatch(f"channel {self.name!r}: codes must be 2-d")
        bad = (codes < MISSING) | (codes >= self.alphabet.size)
        if np.any(bad):
            i, t = np.argwhere(bad)[0]
            raise ShapeMismatch(
                f"channel {self.name!r}: code {codes[i, t]} out of range at ({i}, {t})"
            )
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def observed(self) -> np.ndarray:
        return self.codes != MISSING


@dataclass(frozen=True)
class SequenceDataset:
    """Immutable collection of aligned channels for N subjects x T times."""

    channels: tuple[Channel, ...]
    subject_ids: tuple[str, ...]

    def __post_init__(self):
        channels = tuple(self.channels)
        ids = tuple(str(s) for s in self.subject_ids)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "subject_ids", ids)
        if not channels:
            raise ShapeMismatch("dataset needs at least one channel")
        if len(set(ids)) != len(ids):
            raise ShapeMismatch("subject ids must be distinct")
        shape = channels[0].codes.shape
        for ch in channels:
            if ch.codes.shape != shape:
                raise ShapeMismatch(
                    f"channel {ch.name!r} has shape {ch.codes.shape}, expected {shape}"
                )
        if shape[0] != len(ids):
            raise ShapeMismatch(
                f"{len(ids)} subject ids for {shape[0]} rows of observations"
            )

    @property
    def n_subjects(self) -> int:
        return self.channels[0].codes.shape[0]

    @property
    def n_time(self) -> int:
        return self.channels[0].codes.shape[1]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(ch.name for ch in self.channels)

    @property
    def alphabets(self) -> tuple[Alphabet, ...]:
        return tuple(ch.alphabet for ch in self.channels)

    def to_json(self) -> dict:
        """Serialize to the documented token-level JSON form."""
        return {
            "subject_ids": list(self.subject_ids),
            "channels": [
                {
                    "name": ch.name,
                    "alphabet": list(ch.alphabet.labels),
                    "missing_token": ch.alphabet.missing_token,
                    "rows": [
                        [ch.alphabet.token(int(c)) for c in row] for row in ch.codes
                    ],
                }
                for ch in self.channels
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SequenceDataset":
        channels = []
        for spec in doc["channels"]:
            alpha = define_alphabet(spec["alphabet"], spec.get("missing_token", "*"))
            rows = spec["rows"]
            codes = np.empty((len(rows), len(rows[0]) if rows else 0), dtype=np.int64)
            for i, row in enumerate(rows):
                for t, tok in enumerate(row):
                    try:
                        codes[i, t] = alpha.code(tok)
                    except KeyError:
                        raise UnknownToken(spec["name"], i, t, tok) from None
            channels.append(Channel(spec["name"], alpha, codes))
        return cls(tuple(channels), tuple(doc["subject_ids"]))


@dataclass(frozen=True)
class CovariateDesign:
    """Subject-level design matrix; the first column is always an intercept."""

    names: tuple[str, ...]
    X: np.ndarray = field(repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if X.ndim != 2 or X.shape[1] != len(names):
            raise ShapeMismatch("design matrix columns must match names")
        if not np.all(np.isfinite(X)):
            raise MissingCovariate("covariates must be completely observed")
        if not np.all(X[:, 0] == 1.0):
            raise ShapeMismatch("first design column must be an all-ones intercept")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @property
    def n_subjects(self) -> int:
        return self.X.shape[0]

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    @classmethod
    def intercept(cls, n_subjects: int) -> "CovariateDesign":
        return cls((INTERCEPT_NAME,), np.ones((n_subjects, 1)))


def _read_wide_csv(path: Path):
    """Read a wide sequence CSV: header row, then one row of id + T tokens."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if len(rows) < 2:
        raise ShapeMismatch(f"{path}: expected a header row and at least one subject")
    header, data = rows[0], rows[1:]
    width = len(header)
    for i, row in enumerate(data):
        if len(row) != width:
            raise ShapeMismatch(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
    ids = [row[0] for row in data]
    cells = [[tok.strip() for tok in row[1:]] for row in data]
    return ids, cells


def _load_covariates(path: Path, subject_ids: Sequence[str]) -> CovariateDesign:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if len(rows) < 2:
        raise MissingCovariate(f"{path}: no covariate rows")
    header, data = rows[0], rows[1:]
    by_id = {}
    for row in data:
        if len(row) != len(header):
            raise ShapeMismatch(f"{path}: ragged covariate row {row!r}")
        by_id[row[0]] = row[1:]
    X = np.ones((len(subject_ids), len(header)))
    for i, sid in enumerate(subject_ids):
        if sid not in by_id:
            raise MissingCovariate(f"{path}: no covariate row for subject {sid!r}")
        for q, cell in enumerate(by_id[sid]):
            try:
                X[i, q + 1] = float(cell)
            except ValueError:
                raise MissingCovariate(
                    f"{path}: non-numeric covariate {cell!r} for subject {sid!r}"
                ) from None
    names = (INTERCEPT_NAME, *header[1:])
    return CovariateDesign(names, X)


def ingest_dataset(manifest_path) -> tuple[SequenceDataset, Optional[CovariateDesign]]:
    """Load a dataset (and optional covariates) described by a JSON manifest.

    The manifest lists channels as ``{"name", "csv", "alphabet",
    "missing_token"}`` entries; CSV paths are resolved relative to the
    manifest.  All channels must agree on subject ids and sequence length.

    Returns
    -------
    (SequenceDataset, CovariateDesign | None)
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = manifest_path.parent
    channels = []
    ref_ids = None
    for spec in manifest["channels"]:
        alpha = define_alphabet(spec["alphabet"], spec.get("missing_token", "*"))
        ids, cells = _read_wide_csv(base / spec["csv"])
        if ref_ids is None:
            ref_ids = ids
        elif ids != ref_ids:
            raise ShapeMismatch(
                f"channel {spec['name']!r}: subject ids disagree with first channel"
            )
        if channels and len(cells[0]) != channels[0].codes.shape[1]:
            raise ShapeMismatch(
                f"channel {spec['name']!r}: sequence length disagrees with first channel"
            )
        codes = np.empty((len(ids), len(cells[0])), dtype=np.int64)
        for i, row in enumerate(cells):
            for t, tok in enumerate(row):
                try:
                    codes[i, t] = alpha.code(tok)
                except KeyError:
                    raise UnknownToken(spec["name"], i, t, tok) from None
        channels.append(Channel(spec["name"], alpha, codes))
    data = SequenceDataset(tuple(channels), tuple(ref_ids))
    design = None
    if manifest.get("covariates_csv"):
        design = _load_covariates(base / manifest["covariates_csv"], data.subject_ids)
    return data, design


def mc_to_sc(data: SequenceDataset, separator: str = "/") -> SequenceDataset:
    """Collapse a multichannel dataset to a single combined channel.

    The combined alphabet is the set of cross-channel label combinations
    actually observed, ordered lexicographically by channel-wise code
    tuples and joined with ``separator``.  Any time point with at least one
    missing channel becomes missing in the combined channel.
    """
    if data.n_channels == 1:
        return data
    stacked = np.stack([ch.codes for ch in data.channels])  # (C, N, T)
    all_observed = np.all(stacked != MISSING, axis=0)
    tuples = sorted({tuple(stacked[:, i, t]) for i, t in np.argwhere(all_observed)})
    index = {tup: k for k, tup in enumerate(tuples)}
    labels = tuple(
        separator.join(ch.alphabet.labels[c] for ch, c in zip(data.channels, tup))
        for tup in tuples
    )
    codes = np.full((data.n_subjects, data.n_time), MISSING, dtype=np.int64)
    for i, t in np.argwhere(all_observed):
        codes[i, t] = index[tuple(stacked[:, i, t])]
    name = separator.join(data.channel_names)
    missing_token = data.channels[0].alphabet.missing_token
    channel = Channel(name, Alphabet(labels, missing_token), codes)
    return SequenceDataset((channel,), data.subject_ids)


def effective_size(data: SequenceDataset) -> float:
    """Missing-adjusted data size: sum over cells of observed fraction per (i, t).

    Equals N*T when fully observed; may be non-integer when C > 1.
    """
    observed = np.stack([ch.observed for ch in data.channels])
    return float(observed.mean(axis=0).sum())
