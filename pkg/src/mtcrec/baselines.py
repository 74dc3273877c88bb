"""Popularity and artist-overlap baselines: PopRank, SAGH, CAGH.

All tables are built from the training playlists only. For the cold-songs
setting, callers pass the candidate (held-out) song ids and the observed
context songs, which must come from the training side of the split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import sparse

from .corpus import COLD_SONGS, COLD_USERS, SETTINGS, Corpus
from .errors import DataError


@dataclass(frozen=True)
class PopularityTable:
    """Training playcounts per song and per artist."""

    song_playcount: np.ndarray
    artist_playcount: np.ndarray
    song_artist: np.ndarray

    @classmethod
    def build(cls, corpus: Corpus, train_playlists: Iterable[int]) -> "PopularityTable":
        counts = corpus.playcounts(train_playlists)
        return cls(
            song_playcount=counts,
            artist_playcount=corpus.artist_playcounts(counts),
            song_artist=corpus.song_artist.copy(),
        )


@dataclass(frozen=True)
class CollocationMatrix:
    """Symmetric artist-by-artist counts of shared training playlists.

    The diagonal holds each artist's own training-playlist count.
    """

    counts: sparse.csr_matrix

    @classmethod
    def build(cls, corpus: Corpus, train_playlists: Iterable[int]) -> "CollocationMatrix":
        rows, cols = [], []
        for i in train_playlists:
            artists = np.unique(corpus.song_artist[corpus.playlist_members[i]])
            for a in artists:
                for b in artists:
                    rows.append(a)
                    cols.append(b)
        n = corpus.n_artists
        data = np.ones(len(rows), dtype=np.float64)
        mat = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        return cls(mat)

    def context_weights(self, context_artists: np.ndarray) -> np.ndarray:
        """Per-artist sum of collocation counts with the context artists."""
        if context_artists.size == 0:
            return np.zeros(self.counts.shape[0])
        return np.asarray(self.counts[:, context_artists].sum(axis=1)).ravel()


def _validate_setting(setting: str) -> None:
    if setting not in SETTINGS:
        raise DataError(f"unknown setting {setting!r}")


def context_artists(corpus: Corpus, context_songs: Iterable[int]) -> np.ndarray:
    """Distinct artists of the observed context songs."""
    songs = np.asarray(list(context_songs), dtype=np.int64)
    if songs.size == 0:
        return np.empty(0, dtype=np.int64)
    return np.unique(corpus.song_artist[songs])


def poprank_scores(pop: PopularityTable, setting: str, candidates: np.ndarray | None = None) -> np.ndarray:
    """Training popularity of each candidate; in the cold-songs setting a
    song inherits its artist's accumulated playcount."""
    _validate_setting(setting)
    if setting == COLD_SONGS:
        if candidates is None:
            raise DataError("cold-songs scoring needs the candidate song ids")
        return pop.artist_playcount[pop.song_artist[candidates]].astype(np.float64)
    return pop.song_playcount.astype(np.float64)


def sagh_scores(
    pop: PopularityTable,
    corpus: Corpus,
    context_songs: Iterable[int],
    setting: str,
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """Same Artists, Greatest Hits: popularity restricted to songs whose
    artist appears among the context songs."""
    _validate_setting(setting)
    ctx = context_artists(corpus, context_songs)
    in_ctx = np.zeros(corpus.n_artists, dtype=bool)
    in_ctx[ctx] = True
    base = poprank_scores(pop, setting, candidates)
    artists = pop.song_artist if setting != COLD_SONGS else pop.song_artist[candidates]
    return np.where(in_ctx[artists], base, 0.0)


def cagh_scores(
    pop: PopularityTable,
    colloc: CollocationMatrix,
    corpus: Corpus,
    context_songs: Iterable[int] | None,
    setting: str,
    candidates: np.ndarray | None = None,
    top_artists: int = 10,
) -> np.ndarray:
    """Collocated Artists, Greatest Hits: popularity weighted by the
    collocation counts between each song's artist and the context artists.

    In the cold-users setting there is no context, so the ``top_artists``
    most popular artists stand in.
    """
    _validate_setting(setting)
    if setting == COLD_USERS:
        order = np.lexsort((np.arange(pop.artist_playcount.size), -pop.artist_playcount))
        ctx = np.sort(order[: min(top_artists, order.size)])
    else:
        if context_songs is None:
            raise DataError("context songs required outside the cold-users setting")
        ctx = context_artists(corpus, context_songs)
    weights = colloc.context_weights(ctx)
    base = poprank_scores(pop, setting, candidates)
    artists = pop.song_artist if setting != COLD_SONGS else pop.song_artist[candidates]
    return base * weights[artists]
