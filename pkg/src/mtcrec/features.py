"""Song feature matrix assembly.

Columns come from corpus metadata, optional genre one-hot encodings,
optional precomputed artist embeddings, popularity statistics derived from
the training playlists, and a trailing constant bias column. Continuous
columns are standardised with training-song statistics only, so held-out
songs never influence the scaling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import COLD_SONGS, SETTINGS, Corpus, _data_lines, _parse_value
from .errors import FeatureError

ORIGIN_METADATA = "metadata"
ORIGIN_GENRE = "genre_onehot"
ORIGIN_EMBEDDING = "artist_embedding"
ORIGIN_SONG_POP = "song_popularity"
ORIGIN_ARTIST_POP = "artist_popularity"
ORIGIN_BIAS = "bias"

# origins whose columns are continuous and get standardised
_SCALED_ORIGINS = frozenset({ORIGIN_METADATA, ORIGIN_EMBEDDING, ORIGIN_SONG_POP, ORIGIN_ARTIST_POP})


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    origin: str
    mean: float | None = None  # standardisation parameters, None if unscaled
    std: float | None = None


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[FeatureColumn, ...]

    def __post_init__(self):
        bias = [c for c in self.columns if c.origin == ORIGIN_BIAS]
        if len(bias) != 1:
            raise FeatureError("schema must contain exactly one bias column")
        if self.columns[-1].origin != ORIGIN_BIAS:
            raise FeatureError("bias column must come last")

    @property
    def dim(self) -> int:
        return len(self.columns)

    def origins(self) -> set[str]:
        return {c.origin for c in self.columns}

    def hash(self) -> str:
        doc = [[c.name, c.origin, c.mean, c.std] for c in self.columns]
        payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(payload).hexdigest()

    def to_dict(self) -> list[dict]:
        return [
            {"name": c.name, "origin": c.origin, "mean": c.mean, "std": c.std}
            for c in self.columns
        ]

    @classmethod
    def from_dict(cls, doc: Sequence[dict]) -> "FeatureSchema":
        return cls(tuple(FeatureColumn(d["name"], d["origin"], d["mean"], d["std"]) for d in doc))


class FeatureMatrix:
    """Dense song-by-feature matrix with its schema."""

    def __init__(self, values: np.ndarray, schema: FeatureSchema):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != schema.dim:
            raise FeatureError(f"feature matrix shape {values.shape} does not match schema dim {schema.dim}")
        if not np.isfinite(values).all():
            raise FeatureError("feature matrix contains non-finite entries")
        bias_col = next(j for j, c in enumerate(schema.columns) if c.origin == ORIGIN_BIAS)
        if not np.all(values[:, bias_col] == 1.0):
            raise FeatureError("bias column must be identically 1.0")
        self.values = values
        self.schema = schema

    @property
    def n_songs(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def row(self, m: int) -> np.ndarray:
        if not 0 <= m < self.n_songs:
            raise FeatureError(f"song index {m} out of range [0, {self.n_songs})")
        return self.values[m]

    def select(self, song_ids: Iterable[int]) -> "FeatureMatrix":
        """Row subset with the schema (and its hash) preserved."""
        ids = np.asarray(list(song_ids), dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_songs):
            raise FeatureError("select indices out of range")
        return FeatureMatrix(self.values[ids], self.schema)


def feature_row(x: FeatureMatrix, m: int) -> np.ndarray:
    """Feature vector of song ``m``."""
    return x.row(m)


def _load_genre_table(path: str, corpus: Corpus) -> dict[int, str]:
    table: dict[int, str] = {}
    for lineno, line in _data_lines(path):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise FeatureError(f"{path}:{lineno}: expected song_id,genre_label")
        sid, label = parts
        if sid == "song_id":
            continue  # optional header
        if sid not in corpus.song_index:
            continue  # genre rows for unknown songs are ignored
        table[corpus.song_index[sid]] = label
    return table


def _load_embeddings(path: str) -> tuple[dict[str, np.ndarray], np.ndarray | None, int]:
    """Artist embedding table; an ``*`` row acts as a fallback vector."""
    table: dict[str, np.ndarray] = {}
    fallback = None
    dim = -1
    for lineno, line in _data_lines(path):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2:
            raise FeatureError(f"{path}:{lineno}: expected artist_id,<floats...>")
        aid = parts[0]
        vec = np.array([_parse_value(t, path, lineno, "embedding") for t in parts[1:]])
        if not np.isfinite(vec).all():
            raise FeatureError(f"{path}:{lineno}: embedding contains missing values")
        if dim < 0:
            dim = vec.size
        elif vec.size != dim:
            raise FeatureError(f"{path}:{lineno}: embedding dimension {vec.size} != {dim}")
        if aid == "*":
            fallback = vec
        else:
            table[aid] = vec
    if dim < 0:
        raise FeatureError(f"{path}: empty embeddings file")
    return table, fallback, dim


def build_features(
    corpus: Corpus,
    train_playlists: Iterable[int],
    genre_table: str | None = None,
    embeddings: str | None = None,
    setting: str = "cold_playlists",
) -> FeatureMatrix:
    """Assemble the feature matrix over all corpus songs.

    Popularity columns and all normalisation statistics are computed from
    the training playlists and the songs they contain; in the cold-songs
    setting the song-popularity column is omitted entirely.
    """
    if setting not in SETTINGS:
        raise FeatureError(f"unknown setting {setting!r}")
    train_pl = sorted(set(int(i) for i in train_playlists))
    if not train_pl:
        raise FeatureError("training playlist set is empty")
    train_songs = corpus.songs_of_playlists(train_pl)
    m = corpus.n_songs

    names: list[str] = []
    origins: list[str] = []
    cols: list[np.ndarray] = []

    # corpus metadata, mean-imputed from training songs
    for j, name in enumerate(corpus.metadata_names):
        vals = corpus.metadata[:, j].copy()
        train_vals = vals[train_songs]
        known = np.isfinite(train_vals)
        if not known.any():
            raise FeatureError(f"metadata column {name!r} has no observed training values")
        fill = float(train_vals[known].mean())
        vals[~np.isfinite(vals)] = fill
        names.append(f"meta:{name}")
        origins.append(ORIGIN_METADATA)
        cols.append(vals)

    # genre one-hot with mean imputation over training genre counts
    if genre_table is not None:
        genre_of = _load_genre_table(genre_table, corpus)
        train_labels = sorted({genre_of[s] for s in train_songs if s in genre_of})
        if not train_labels:
            raise FeatureError("genre table covers no training songs")
        label_pos = {g: k for k, g in enumerate(train_labels)}
        counts = np.zeros(len(train_labels))
        for s in train_songs:
            g = genre_of.get(int(s))
            if g in label_pos:
                counts[label_pos[g]] += 1
        mean_vec = counts / counts.sum()
        onehot = np.tile(mean_vec, (m, 1))
        for s, g in genre_of.items():
            if g in label_pos:
                onehot[s] = 0.0
                onehot[s, label_pos[g]] = 1.0
        # songs absent from the table, or with labels unseen in training,
        # keep the imputed mean vector
        for k, g in enumerate(train_labels):
            names.append(f"genre:{g}")
            origins.append(ORIGIN_GENRE)
            cols.append(onehot[:, k])

    # precomputed artist embeddings
    if embeddings is not None:
        table, fallback, dim = _load_embeddings(embeddings)
        emb = np.empty((m, dim))
        for s in range(m):
            aid = corpus.artist_ids[corpus.song_artist[s]]
            vec = table.get(aid, fallback)
            if vec is None:
                raise FeatureError(f"no embedding for artist {aid!r} and no fallback row")
            emb[s] = vec
        for k in range(dim):
            names.append(f"emb:{k}")
            origins.append(ORIGIN_EMBEDDING)
            cols.append(emb[:, k])

    song_counts = corpus.playcounts(train_pl)
    if setting != COLD_SONGS:
        names.append("song_popularity")
        origins.append(ORIGIN_SONG_POP)
        cols.append(song_counts.astype(np.float64))

    artist_counts = corpus.artist_playcounts(song_counts)
    names.append("artist_popularity")
    origins.append(ORIGIN_ARTIST_POP)
    cols.append(artist_counts[corpus.song_artist].astype(np.float64))

    values = np.column_stack(cols) if cols else np.empty((m, 0))
    specs: list[FeatureColumn] = []
    for j, (name, origin) in enumerate(zip(names, origins)):
        if origin in _SCALED_ORIGINS:
            mean = float(values[train_songs, j].mean())
            std = float(values[train_songs, j].std())
            if std > 1e-12:
                values[:, j] = (values[:, j] - mean) / std
                specs.append(FeatureColumn(name, origin, mean, std))
                continue
            # constant column: kept unscaled for schema stability
        specs.append(FeatureColumn(name, origin))

    values = np.column_stack([values, np.ones(m)])
    specs.append(FeatureColumn("bias", ORIGIN_BIAS))
    return FeatureMatrix(values, FeatureSchema(tuple(specs)))
