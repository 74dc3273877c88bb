"""Multitask classification model: training, cold-start scoring rules,
recommendation and persistence."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import losses, owlqn
from .corpus import Corpus
from .errors import ModelError
from .features import FeatureMatrix
from .losses import Hyperparams, ModelParams

_MAGIC = b"MTCMODEL"
_FORMAT_VERSION = 1


@dataclass
class TrainedModel:
    """Model weights plus the index maps tying them back to the corpus.

    ``user_ids`` and ``playlist_ids`` list the original corpus indices in
    weight-row order; ``playlist_owner_rows[j]`` is the alpha row owning
    beta row ``j``.
    """

    theta: ModelParams
    hp: Hyperparams
    schema_hash: str
    n_train_songs: int
    user_ids: np.ndarray
    playlist_ids: np.ndarray
    playlist_owner_rows: np.ndarray
    user_attrs: np.ndarray | None
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        self.user_ids = np.asarray(self.user_ids, dtype=np.int64)
        self.playlist_ids = np.asarray(self.playlist_ids, dtype=np.int64)
        self.playlist_owner_rows = np.asarray(self.playlist_owner_rows, dtype=np.int64)
        if self.user_ids.size != self.theta.n_users:
            raise ModelError("user map does not match alpha rows")
        if self.playlist_ids.size != self.theta.n_playlists:
            raise ModelError("playlist map does not match beta rows")
        if self.playlist_owner_rows.size != self.theta.n_playlists:
            raise ModelError("playlist owner map does not match beta rows")
        self._user_row = {int(u): j for j, u in enumerate(self.user_ids)}
        self._playlist_row = {int(i): j for j, i in enumerate(self.playlist_ids)}

    @property
    def dim(self) -> int:
        return self.theta.dim

    def user_row(self, u: int) -> int:
        try:
            return self._user_row[int(u)]
        except KeyError:
            raise ModelError(f"user {u} was not in the training set") from None

    def playlist_row(self, i: int) -> int:
        try:
            return self._playlist_row[int(i)]
        except KeyError:
            raise ModelError(f"playlist {i} was not in the training set") from None


def _check_schema(model: TrainedModel, x: FeatureMatrix) -> None:
    if x.dim != model.dim:
        raise ModelError(
            f"feature dimension {x.dim} does not match the model's {model.dim}"
        )
    if x.schema.hash() != model.schema_hash:
        warnings.warn("feature schema hash differs from the one used at training time")


def train(
    corpus: Corpus,
    x: FeatureMatrix,
    train_playlists: Iterable[int],
    hp: Hyperparams,
    cfg: owlqn.OwlqnConfig | None = None,
    init_seed: int | None = None,
) -> TrainedModel:
    """Fit the multitask classification objective with OWL-QN.

    The problem is convex, so the zero initialisation (the default) only
    affects the optimisation path; passing ``init_seed`` starts from a
    small seeded Gaussian point instead.
    """
    if x.n_songs != corpus.n_songs:
        raise ModelError("feature matrix rows do not match the corpus songs")
    sub, maps = corpus.subset(train_playlists)
    xt = x.select(maps.songs)
    n_u, n_i, dim = sub.n_users, sub.n_playlists, x.dim

    if init_seed is None:
        theta0 = ModelParams.zeros(n_u, n_i, dim)
    else:
        rng = np.random.default_rng(init_seed)
        theta0 = ModelParams(
            1e-3 * rng.standard_normal((n_u, dim)),
            1e-3 * rng.standard_normal((n_i, dim)),
            1e-3 * rng.standard_normal(dim),
        )
    _, _, l1 = losses.regulariser(theta0, hp)

    def objective(vec: np.ndarray):
        theta = ModelParams.unpack(vec, n_u, n_i, dim)
        risk, grad = losses.mtc_risk_grad(theta, xt, sub, hp.p)
        smooth, sgrad, _ = losses.regulariser(theta, hp)
        total_grad = ModelParams(grad.alpha + sgrad.alpha, grad.beta, grad.mu)
        return risk + smooth, total_grad.pack()

    clamp_before = losses.clamp_events()
    report = owlqn.minimize(objective, l1, theta0.pack(), cfg)
    theta = ModelParams.unpack(report.x, n_u, n_i, dim)

    attrs = None
    if sub.user_attrs is not None and sub.user_attrs.size:
        attrs = sub.user_attrs.copy()
    return TrainedModel(
        theta=theta,
        hp=hp,
        schema_hash=x.schema.hash(),
        n_train_songs=sub.n_songs,
        user_ids=maps.users,
        playlist_ids=maps.playlists,
        playlist_owner_rows=sub.playlist_owner.copy(),
        user_attrs=attrs,
        summary={
            "iterations": report.iterations,
            "termination": report.reason,
            "final_objective": report.objective,
            "clamp_events": losses.clamp_events() - clamp_before,
        },
    )


# -- scoring rules -------------------------------------------------------


def score_cold_playlist(model: TrainedModel, x: FeatureMatrix, u: int) -> np.ndarray:
    """Scores for forming a new playlist for known user ``u``:
    (alpha_u + mu) . x_m. Playlist weights never enter."""
    _check_schema(model, x)
    row = model.user_row(u)
    return x.values @ (model.theta.alpha[row] + model.theta.mu)


def score_cold_user(model: TrainedModel, x: FeatureMatrix, attrs: np.ndarray, k: int = 10) -> np.ndarray:
    """Scores for a new user described by an attribute vector.

    The k most attribute-similar training users (cosine similarity, ties
    broken by ascending user id) lend the average of their weights.
    """
    _check_schema(model, x)
    if model.user_attrs is None:
        raise ModelError("model has no user attributes; use score_cold_user_anonymous")
    if k < 1:
        raise ModelError("k must be >= 1")
    attrs = np.nan_to_num(np.asarray(attrs, dtype=np.float64), nan=0.0)
    table = np.nan_to_num(model.user_attrs, nan=0.0)
    if attrs.size != table.shape[1]:
        raise ModelError("attribute vector length does not match the training attributes")
    norms = np.linalg.norm(table, axis=1) * np.linalg.norm(attrs)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, table @ attrs / np.where(norms > 0, norms, 1.0), 0.0)
    k = min(k, sims.size)
    order = np.lexsort((np.arange(sims.size), -sims))
    nbrs = order[:k]
    w = model.theta.alpha[nbrs].mean(axis=0) + model.theta.mu
    return x.values @ w


def score_cold_user_anonymous(model: TrainedModel, x: FeatureMatrix) -> np.ndarray:
    """Scores from the shared weights alone: mu . x_m."""
    _check_schema(model, x)
    return x.values @ model.theta.mu


def score_cold_song(model: TrainedModel, x_new: FeatureMatrix, u: int, i: int) -> np.ndarray:
    """Scores of new songs for extending playlist ``i`` of user ``u``:
    (alpha_u + beta_i + mu) . x."""
    _check_schema(model, x_new)
    urow = model.user_row(u)
    irow = model.playlist_row(i)
    if model.playlist_owner_rows[irow] != urow:
        raise ModelError(f"playlist {i} is not owned by user {u}")
    w = model.theta.alpha[urow] + model.theta.beta[irow] + model.theta.mu
    return x_new.values @ w


# -- recommendation ------------------------------------------------------

TOP_K = "top_k"
SAMPLED = "sampled"


@dataclass(frozen=True)
class Recommendation:
    song_ids: np.ndarray
    scores: np.ndarray
    mode: str

    @property
    def items(self) -> list[tuple[int, float]]:
        return [(int(m), float(s)) for m, s in zip(self.song_ids, self.scores)]


def recommend(scores: np.ndarray, k: int, mode: str = TOP_K, seed: int | None = None) -> Recommendation:
    """Pick ``k`` distinct songs, either the top scored (ties broken by
    ascending index) or sampled without replacement with softmax(score)
    probabilities."""
    scores = np.asarray(scores, dtype=np.float64)
    if k <= 0:
        raise ModelError("k must be positive")
    if k > scores.size:
        raise ModelError(f"k={k} exceeds the {scores.size} candidates")
    if mode == TOP_K:
        order = np.lexsort((np.arange(scores.size), -scores))
        chosen = order[:k]
    elif mode == SAMPLED:
        shifted = scores - scores.max()
        probs = np.exp(shifted)
        probs /= probs.sum()
        rng = np.random.default_rng(seed)
        chosen = rng.choice(scores.size, size=k, replace=False, p=probs)
    else:
        raise ModelError(f"unknown recommendation mode {mode!r}")
    return Recommendation(song_ids=chosen.astype(np.int64), scores=scores[chosen], mode=mode)


# -- persistence ---------------------------------------------------------


def save_model(model: TrainedModel, path: str) -> None:
    """Versioned binary container: JSON header, then row-major alpha, beta,
    mu (and user attributes when present) as little-endian float64."""
    header = {
        "format_version": _FORMAT_VERSION,
        "n_songs": model.n_train_songs,
        "n_playlists": int(model.theta.n_playlists),
        "n_users": int(model.theta.n_users),
        "dim": int(model.dim),
        "hp": {
            "lambda1": model.hp.lambda1,
            "lambda2": model.hp.lambda2,
            "lambda3": model.hp.lambda3,
            "p": model.hp.p,
        },
        "schema_hash": model.schema_hash,
        "user_ids": model.user_ids.tolist(),
        "playlist_ids": model.playlist_ids.tolist(),
        "playlist_owner_rows": model.playlist_owner_rows.tolist(),
        "n_attrs": None if model.user_attrs is None else int(model.user_attrs.shape[1]),
        "summary": model.summary,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.theta.alpha.astype("<f8").tobytes(order="C"))
        fh.write(model.theta.beta.astype("<f8").tobytes(order="C"))
        fh.write(model.theta.mu.astype("<f8").tobytes(order="C"))
        if model.user_attrs is not None:
            fh.write(model.user_attrs.astype("<f8").tobytes(order="C"))


def load_model(path: str) -> TrainedModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ModelError(f"{path}: not a model file (bad magic bytes)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != _FORMAT_VERSION:
            raise ModelError(f"{path}: unsupported format version {header.get('format_version')}")
        n_u, n_i, dim = header["n_users"], header["n_playlists"], header["dim"]

        def _block(rows, cols):
            raw = fh.read(rows * cols * 8)
            if len(raw) != rows * cols * 8:
                raise ModelError(f"{path}: truncated weight block")
            return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()

        alpha = _block(n_u, dim)
        beta = _block(n_i, dim)
        mu = _block(1, dim)[0]
        attrs = None
        if header["n_attrs"] is not None:
            attrs = _block(n_u, header["n_attrs"])

    hp = Hyperparams(**header["hp"])
    return TrainedModel(
        theta=ModelParams(alpha, beta, mu),
        hp=hp,
        schema_hash=header["schema_hash"],
        n_train_songs=header["n_songs"],
        user_ids=np.array(header["user_ids"], dtype=np.int64),
        playlist_ids=np.array(header["playlist_ids"], dtype=np.int64),
        playlist_owner_rows=np.array(header["playlist_owner_rows"], dtype=np.int64),
        user_attrs=attrs,
        summary=header["summary"],
    )
