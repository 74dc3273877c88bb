"""Canonical in-memory data model for songs, artists, users and playlists.

External ids are strings; dense zero-based indices are assigned by
lexicographic sort of the external ids, so reloading the same files always
produces the same index assignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusError

COLD_PLAYLISTS = "cold_playlists"
COLD_USERS = "cold_users"
COLD_SONGS = "cold_songs"
SETTINGS = (COLD_PLAYLISTS, COLD_USERS, COLD_SONGS)


@dataclass(frozen=True)
class Membership:
    """Positive/negative partition of the song collection for one playlist."""

    positives: np.ndarray  # sorted ascending song indices
    n_songs: int

    @property
    def n_pos(self) -> int:
        return int(self.positives.size)

    @property
    def n_neg(self) -> int:
        return self.n_songs - self.n_pos

    def mask(self) -> np.ndarray:
        """Boolean vector over all songs, True at members."""
        m = np.zeros(self.n_songs, dtype=bool)
        m[self.positives] = True
        return m


@dataclass(frozen=True)
class CorpusMaps:
    """New-index to original-index maps produced by :meth:`Corpus.subset`."""

    songs: np.ndarray
    users: np.ndarray
    playlists: np.ndarray


class Corpus:
    """Immutable collection of songs, users, playlists and membership.

    Invariants enforced at construction: every playlist has at least one
    member, every user owns at least one playlist, every song appears in at
    least one playlist, member sets are sorted and duplicate-free.
    """

    def __init__(
        self,
        song_ids: Sequence[str],
        song_artist: np.ndarray,
        song_year: np.ndarray,
        metadata: np.ndarray,
        metadata_names: Sequence[str],
        artist_ids: Sequence[str],
        user_ids: Sequence[str],
        user_attrs: np.ndarray | None,
        attr_names: Sequence[str],
        playlist_ids: Sequence[str],
        playlist_owner: np.ndarray,
        playlist_members: Sequence[np.ndarray],
    ):
        self.song_ids = list(song_ids)
        self.song_artist = np.asarray(song_artist, dtype=np.int64)
        self.song_year = np.asarray(song_year, dtype=np.int64)
        self.metadata = np.asarray(metadata, dtype=np.float64)
        self.metadata_names = list(metadata_names)
        self.artist_ids = list(artist_ids)
        self.user_ids = list(user_ids)
        self.user_attrs = None if user_attrs is None else np.asarray(user_attrs, dtype=np.float64)
        self.attr_names = list(attr_names)
        self.playlist_ids = list(playlist_ids)
        self.playlist_owner = np.asarray(playlist_owner, dtype=np.int64)
        self.playlist_members = [np.asarray(m, dtype=np.int64) for m in playlist_members]
        self._validate()

        self.user_playlists: list[np.ndarray] = [
            np.flatnonzero(self.playlist_owner == u) for u in range(self.n_users)
        ]
        self.song_index = {s: i for i, s in enumerate(self.song_ids)}
        self.user_index = {s: i for i, s in enumerate(self.user_ids)}
        self.playlist_index = {s: i for i, s in enumerate(self.playlist_ids)}
        self.artist_index = {s: i for i, s in enumerate(self.artist_ids)}

    # -- sizes ---------------------------------------------------------

    @property
    def n_songs(self) -> int:
        return len(self.song_ids)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_playlists(self) -> int:
        return len(self.playlist_ids)

    @property
    def n_artists(self) -> int:
        return len(self.artist_ids)

    def _validate(self) -> None:
        m, n, u = self.n_songs, self.n_playlists, self.n_users
        if m == 0:
            raise CorpusError("corpus has no songs")
        if n == 0:
            raise CorpusError("corpus has no playlists")
        if self.song_artist.shape != (m,) or self.song_year.shape != (m,):
            raise CorpusError("song table column length mismatch")
        if self.metadata.ndim != 2 or self.metadata.shape[0] != m:
            raise CorpusError("metadata matrix shape mismatch")
        if self.metadata.shape[1] != len(self.metadata_names):
            raise CorpusError("metadata names do not match metadata columns")
        if np.any(self.song_artist < 0) or np.any(self.song_artist >= self.n_artists):
            raise CorpusError("song references unknown artist index")
        if self.playlist_owner.shape != (n,) or len(self.playlist_members) != n:
            raise CorpusError("playlist table column length mismatch")
        if np.any(self.playlist_owner < 0) or np.any(self.playlist_owner >= u):
            raise CorpusError("playlist references unknown user index")
        if self.user_attrs is not None and self.user_attrs.shape != (u, len(self.attr_names)):
            raise CorpusError("user attribute matrix shape mismatch")

        covered = np.zeros(m, dtype=bool)
        for i, members in enumerate(self.playlist_members):
            if members.size == 0:
                raise CorpusError(f"playlist {self.playlist_ids[i]!r} has no songs")
            if np.any(members < 0) or np.any(members >= m):
                raise CorpusError(f"playlist {self.playlist_ids[i]!r} references unknown song index")
            if np.any(np.diff(members) <= 0):
                raise CorpusError(f"playlist {self.playlist_ids[i]!r} members not sorted/unique")
            covered[members] = True
        if not covered.all():
            missing = [self.song_ids[j] for j in np.flatnonzero(~covered)[:5]]
            raise CorpusError(f"songs appear in no playlist: {missing}")
        owners = np.unique(self.playlist_owner)
        if owners.size != u:
            orphan = sorted(set(range(u)) - set(owners.tolist()))[:5]
            names = [self.user_ids[j] for j in orphan]
            raise CorpusError(f"users own no playlist: {names}")

    # -- queries -------------------------------------------------------

    def membership(self, i: int) -> Membership:
        """Positive set and counts for playlist ``i``."""
        if not 0 <= i < self.n_playlists:
            raise CorpusError(f"invalid playlist index {i}")
        return Membership(self.playlist_members[i], self.n_songs)

    def playcounts(self, playlists: Iterable[int] | None = None) -> np.ndarray:
        """Number of playlists containing each song, over ``playlists``
        (default: all)."""
        counts = np.zeros(self.n_songs, dtype=np.int64)
        idx = range(self.n_playlists) if playlists is None else playlists
        for i in idx:
            counts[self.playlist_members[i]] += 1
        return counts

    def artist_playcounts(self, song_counts: np.ndarray) -> np.ndarray:
        """Aggregate per-song playcounts per artist."""
        return np.bincount(self.song_artist, weights=song_counts, minlength=self.n_artists).astype(np.int64)

    def songs_of_playlists(self, playlists: Iterable[int]) -> np.ndarray:
        """Sorted union of members over the given playlists."""
        pls = list(playlists)
        if not pls:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([self.playlist_members[i] for i in pls]))

    # -- restriction ---------------------------------------------------

    def subset(
        self,
        playlists: Iterable[int],
        songs: Iterable[int] | None = None,
    ) -> tuple["Corpus", CorpusMaps]:
        """Restricted corpus over the given playlists (and optionally songs).

        Songs default to the union of the kept playlists' members. Members
        outside the kept song set are dropped; a playlist left empty is an
        error. Users are the owners of the kept playlists. All index spaces
        are re-assigned densely, preserving ascending original order, except
        the artist table which is kept intact so artist indices stay valid.
        """
        keep_pl = np.unique(np.asarray(list(playlists), dtype=np.int64))
        if keep_pl.size == 0:
            raise CorpusError("subset requires at least one playlist")
        if keep_pl[0] < 0 or keep_pl[-1] >= self.n_playlists:
            raise CorpusError("subset playlist index out of range")

        if songs is None:
            keep_songs = self.songs_of_playlists(keep_pl)
        else:
            keep_songs = np.unique(np.asarray(list(songs), dtype=np.int64))
            if keep_songs.size == 0 or keep_songs[0] < 0 or keep_songs[-1] >= self.n_songs:
                raise CorpusError("subset song index out of range")

        song_new = np.full(self.n_songs, -1, dtype=np.int64)
        song_new[keep_songs] = np.arange(keep_songs.size)

        members = []
        for i in keep_pl:
            kept = song_new[self.playlist_members[i]]
            kept = kept[kept >= 0]
            if kept.size == 0:
                raise CorpusError(
                    f"playlist {self.playlist_ids[i]!r} empty after song restriction"
                )
            members.append(np.sort(kept))

        keep_users = np.unique(self.playlist_owner[keep_pl])
        user_new = np.full(self.n_users, -1, dtype=np.int64)
        user_new[keep_users] = np.arange(keep_users.size)

        sub = Corpus(
            song_ids=[self.song_ids[j] for j in keep_songs],
            song_artist=self.song_artist[keep_songs],
            song_year=self.song_year[keep_songs],
            metadata=self.metadata[keep_songs],
            metadata_names=self.metadata_names,
            artist_ids=self.artist_ids,
            user_ids=[self.user_ids[j] for j in keep_users],
            user_attrs=None if self.user_attrs is None else self.user_attrs[keep_users],
            attr_names=self.attr_names,
            playlist_ids=[self.playlist_ids[j] for j in keep_pl],
            playlist_owner=user_new[self.playlist_owner[keep_pl]],
            playlist_members=members,
        )
        return sub, CorpusMaps(songs=keep_songs, users=keep_users, playlists=keep_pl)

    # -- serialisation -------------------------------------------------

    def serialise(self) -> bytes:
        """Canonical byte representation; equal corpora serialise equal."""

        def _nan_to_none(row):
            return [None if np.isnan(v) else v for v in row]

        doc = {
            "songs": [
                {
                    "id": self.song_ids[m],
                    "artist": self.artist_ids[self.song_artist[m]],
                    "year": int(self.song_year[m]),
                    "meta": _nan_to_none(self.metadata[m]),
                }
                for m in range(self.n_songs)
            ],
            "metadata_names": self.metadata_names,
            "users": [
                {
                    "id": self.user_ids[u],
                    "attrs": None if self.user_attrs is None else _nan_to_none(self.user_attrs[u]),
                }
                for u in range(self.n_users)
            ],
            "attr_names": self.attr_names,
            "playlists": [
                {
                    "id": self.playlist_ids[i],
                    "user": self.user_ids[self.playlist_owner[i]],
                    "members": [self.song_ids[m] for m in self.playlist_members[i]],
                }
                for i in range(self.n_playlists)
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


# -- file ingestion ------------------------------------------------------


def _data_lines(path: str) -> list[tuple[int, str]]:
    """Non-empty, non-comment lines with their 1-based line numbers."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            out.append((lineno, line))
    return out


def _parse_value(token: str, path: str, lineno: int, what: str) -> float:
    token = token.strip()
    if token == "?":
        return float("nan")
    try:
        return float(token)
    except ValueError:
        raise CorpusError(f"{path}:{lineno}: malformed {what} value {token!r}") from None


def load_corpus(songs_path: str, playlists_path: str, users_path: str | None = None) -> "Corpus":
    """Load a corpus from the songs/playlists(/users) file formats.

    Songs: ``song_id,artist_id,release_year[,<metadata...>]`` with a header
    row. Playlists: ``playlist_id,user_id,song_1;song_2;...`` without a
    header. Users: ``user_id,<attributes...>`` with a header row; rows for
    users that own no playlist are ignored. ``#`` lines are comments; ``?``
    marks a missing numeric value.
    """
    # songs
    lines = _data_lines(songs_path)
    if not lines:
        raise CorpusError(f"{songs_path}: empty songs file")
    header = [h.strip() for h in lines[0][1].split(",")]
    if header[:3] != ["song_id", "artist_id", "release_year"]:
        raise CorpusError(
            f"{songs_path}:{lines[0][0]}: header must start with "
            f"song_id,artist_id,release_year"
        )
    metadata_names = header[3:]
    rows: dict[str, tuple[str, int, list[float], int]] = {}
    for lineno, line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(header):
            raise CorpusError(f"{songs_path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
        sid, aid, year_tok = parts[0].strip(), parts[1].strip(), parts[2].strip()
        if not sid or not aid:
            raise CorpusError(f"{songs_path}:{lineno}: empty song or artist id")
        if sid in rows:
            raise CorpusError(f"{songs_path}:{lineno}: duplicate song id {sid!r}")
        try:
            year = int(year_tok)
        except ValueError:
            raise CorpusError(f"{songs_path}:{lineno}: malformed release_year {year_tok!r}") from None
        meta = [_parse_value(t, songs_path, lineno, "metadata") for t in parts[3:]]
        rows[sid] = (aid, year, meta, lineno)

    song_ids = sorted(rows)
    artist_ids = sorted({rows[s][0] for s in song_ids})
    artist_index = {a: j for j, a in enumerate(artist_ids)}
    song_artist = np.array([artist_index[rows[s][0]] for s in song_ids], dtype=np.int64)
    song_year = np.array([rows[s][1] for s in song_ids], dtype=np.int64)
    metadata = np.array([rows[s][2] for s in song_ids], dtype=np.float64).reshape(
        len(song_ids), len(metadata_names)
    )
    song_index = {s: m for m, s in enumerate(song_ids)}

    # playlists
    pl_rows: dict[str, tuple[str, list[int], int]] = {}
    for lineno, line in _data_lines(playlists_path):
        parts = line.split(",")
        if len(parts) != 3:
            raise CorpusError(f"{playlists_path}:{lineno}: expected 3 fields, got {len(parts)}")
        pid, uid, member_tok = parts[0].strip(), parts[1].strip(), parts[2].strip()
        if not pid or not uid:
            raise CorpusError(f"{playlists_path}:{lineno}: empty playlist or user id")
        if pid in pl_rows:
            raise CorpusError(f"{playlists_path}:{lineno}: duplicate playlist id {pid!r}")
        tokens = [t.strip() for t in member_tok.split(";") if t.strip()]
        if not tokens:
            raise CorpusError(f"{playlists_path}:{lineno}: playlist {pid!r} has no songs")
        members = []
        seen = set()
        for t in tokens:
            if t not in song_index:
                raise CorpusError(f"{playlists_path}:{lineno}: unknown song id {t!r} in playlist {pid!r}")
            if t in seen:
                raise CorpusError(f"{playlists_path}:{lineno}: duplicate song {t!r} in playlist {pid!r}")
            seen.add(t)
            members.append(song_index[t])
        pl_rows[pid] = (uid, sorted(members), lineno)
    if not pl_rows:
        raise CorpusError(f"{playlists_path}: empty playlists file")

    playlist_ids = sorted(pl_rows)
    user_ids = sorted({pl_rows[p][0] for p in playlist_ids})
    user_index = {uid: j for j, uid in enumerate(user_ids)}
    playlist_owner = np.array([user_index[pl_rows[p][0]] for p in playlist_ids], dtype=np.int64)
    playlist_members = [np.array(pl_rows[p][1], dtype=np.int64) for p in playlist_ids]

    # users (optional attribute table)
    user_attrs = None
    attr_names: list[str] = []
    if users_path is not None:
        ulines = _data_lines(users_path)
        if not ulines:
            raise CorpusError(f"{users_path}: empty users file")
        uheader = [h.strip() for h in ulines[0][1].split(",")]
        if uheader[:1] != ["user_id"]:
            raise CorpusError(f"{users_path}:{ulines[0][0]}: header must start with user_id")
        attr_names = uheader[1:]
        user_attrs = np.full((len(user_ids), len(attr_names)), np.nan, dtype=np.float64)
        seen_users: set[str] = set()
        for lineno, line in ulines[1:]:
            parts = line.split(",")
            if len(parts) != len(uheader):
                raise CorpusError(f"{users_path}:{lineno}: expected {len(uheader)} fields, got {len(parts)}")
            uid = parts[0].strip()
            if uid in seen_users:
                raise CorpusError(f"{users_path}:{lineno}: duplicate user id {uid!r}")
            seen_users.add(uid)
            if uid not in user_index:
                continue  # attribute rows for users without playlists are ignored
            user_attrs[user_index[uid]] = [
                _parse_value(t, users_path, lineno, "attribute") for t in parts[1:]
            ]

    return Corpus(
        song_ids=song_ids,
        song_artist=song_artist,
        song_year=song_year,
        metadata=metadata,
        metadata_names=metadata_names,
        artist_ids=artist_ids,
        user_ids=user_ids,
        user_attrs=user_attrs,
        attr_names=attr_names,
        playlist_ids=playlist_ids,
        playlist_owner=playlist_owner,
        playlist_members=playlist_members,
    )
