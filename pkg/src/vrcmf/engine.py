"""Matrix-factorization engine with side-information item priors.

The model factorizes ratings r_ij as u_i . v_j with Gaussian priors:
zero-mean on users, mean mu_j on items. mu_j comes from the configured
variant: all zeros (plain PMF), a trainable text branch projected to the
latent dimension (convolutional or recurrent-convolutional), or a linear
fusion head over the concatenated text and visual features.

Training alternates exact coordinate-descent sweeps (each u_i and v_j
has a closed-form ridge solution, optionally confidence-weighted) with
one mini-batch gradient epoch on the side-information weights per
iteration. Every confidence-weighted path degrades bit-for-bit to the
unweighted path when the weight vector is exactly one.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from vrcmf.config import TrainConfig, rng
from vrcmf.ratings import DatasetSplit, RatingsMatrix, csr_index, split_dataset
from vrcmf.textnet import TextCnn, TextRcnn, TextNetError, branch_gradient

logger = logging.getLogger(__name__)


class EngineError(ValueError):
    """Inconsistent inputs or a numerically broken training state."""


@dataclass
class ConfidenceParams:
    """Per-rating weight 1 + alpha * f(r - r_max/2)."""

    alpha: float = 0.3
    distance: str = "absolute"
    r_max: float = 5.0

    def __post_init__(self):
        if self.alpha < 0.0:
            raise EngineError("confidence alpha must be nonnegative")
        if self.r_max <= 0.0:
            raise EngineError("r_max must be positive")
        if self.distance not in ("absolute", "square"):
            raise EngineError("distance must be 'absolute' or 'square'")


def confidence_factor(r, params: ConfidenceParams):
    """Confidence weight for a rating or an array of ratings."""
    d = np.asarray(r, dtype=np.float64) - params.r_max / 2.0
    f = np.abs(d) if params.distance == "absolute" else d * d
    out = 1.0 + params.alpha * f
    return float(out) if np.ndim(r) == 0 else out


def spd_solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the SPD system A x = rhs by Cholesky, with a jitter retry."""
    if not (np.isfinite(A).all() and np.isfinite(rhs).all()):
        raise EngineError("non-finite values in factor update; training diverged")
    try:
        return cho_solve(cho_factor(A, lower=True), rhs)
    except np.linalg.LinAlgError:
        pass
    bumped = A + 1e-10 * np.eye(A.shape[0])
    try:
        return cho_solve(cho_factor(bumped, lower=True), rhs)
    except np.linalg.LinAlgError:
        raise EngineError("linear system is not positive definite") from None


def als_update_user(V: np.ndarray, items: np.ndarray, ratings: np.ndarray,
                    weights: np.ndarray | None, lam_u: float) -> np.ndarray:
    """Closed-form ridge solution for one user given fixed item factors."""
    k = V.shape[0]
    if len(items) == 0:
        return np.zeros(k)
    Vi = V[:, items]
    if weights is None:
        A = Vi @ Vi.T
        rhs = Vi @ ratings
    else:
        A = (Vi * weights) @ Vi.T
        rhs = Vi @ (weights * ratings)
    A[np.diag_indices_from(A)] += lam_u
    return spd_solve(A, rhs)


def als_update_item(U: np.ndarray, users: np.ndarray, ratings: np.ndarray,
                    weights: np.ndarray | None, lam_v: float,
                    mu_j: np.ndarray) -> np.ndarray:
    """Closed-form ridge solution for one item, shrunk toward its prior mean."""
    if len(users) == 0:
        return mu_j.copy()
    Ui = U[:, users]
    if weights is None:
        A = Ui @ Ui.T
        rhs = Ui @ ratings
    else:
        A = (Ui * weights) @ Ui.T
        rhs = Ui @ (weights * ratings)
    rhs = rhs + lam_v * mu_j
    A[np.diag_indices_from(A)] += lam_v
    return spd_solve(A, rhs)


def total_loss(user_idx, item_idx, ratings, U, V, mu=None, weights=None,
               lam_u: float = 1.0, lam_v: float = 1.0, lam_w: float = 0.0,
               w_norm_sq: float = 0.0) -> float:
    """Regularized objective over the observed entries.

    sum over observed (c_ij/2)(r_ij - u_i.v_j)^2
    + (lam_u/2)||U||^2 + (lam_v/2)||V - mu||^2 + (lam_w/2)||W'||^2
    """
    preds = np.einsum("ki,ki->i", U[:, user_idx], V[:, item_idx])
    resid = ratings - preds
    sq = resid * resid
    if weights is not None:
        sq = weights * sq
    dv = V if mu is None else V - mu
    loss = (0.5 * float(sq.sum()) + 0.5 * lam_u * float(np.sum(U * U))
            + 0.5 * lam_v * float(np.sum(dv * dv)) + 0.5 * lam_w * w_norm_sq)
    if not math.isfinite(loss):
        raise EngineError("objective is non-finite")
    return loss


@dataclass
class FusionHead:
    """Linear map from concatenated side features to the item prior mean."""

    W: np.ndarray  # (k, text_dim + visual_dim)
    b: np.ndarray  # (k,)

    @classmethod
    def create(cls, k: int, in_dim: int, generator) -> "FusionHead":
        bound = math.sqrt(6.0 / (in_dim + k))
        return cls(W=generator.uniform(-bound, bound, size=(k, in_dim)), b=np.zeros(k))

    def forward(self, z: np.ndarray) -> np.ndarray:
        return self.W @ z + self.b

    def norm_sq(self) -> float:
        return float(np.sum(self.W * self.W) + np.sum(self.b * self.b))

    def copy(self) -> "FusionHead":
        return FusionHead(W=self.W.copy(), b=self.b.copy())


def fused_gradient(net, head: FusionHead, sequences, visual_rows, targets,
                   lambda_v: float, lambda_w: float, dropout_masks=None):
    """Loss and exact gradients for the fused prior on one batch.

    loss = (lambda_v/2) sum ||target_j - head([net(seq_j); visual_j])||^2
         + (lambda_w/2) (||net params||^2 + ||head||^2)
    """
    grads = {name: lambda_w * v for name, v in net.params.items()}
    gW = lambda_w * head.W
    gb = lambda_w * head.b
    loss = 0.5 * lambda_w * (sum(float(np.sum(v * v)) for v in net.params.values())
                             + head.norm_sq())
    targets = np.asarray(targets, dtype=np.float64)
    for pos, seq in enumerate(sequences):
        mask = None if dropout_masks is None else dropout_masks[pos]
        phi, cache = net.forward(seq, dropout_mask=mask)
        z = np.concatenate([phi, visual_rows[pos]])
        resid = head.forward(z) - targets[pos]
        loss += 0.5 * lambda_v * float(resid @ resid)
        dmu = lambda_v * resid
        gW += np.outer(dmu, z)
        gb += dmu
        dphi = head.W[:, :net.out_dim].T @ dmu
        for name, g in net.backward(cache, dphi).items():
            grads[name] += g
    if not math.isfinite(loss):
        raise TextNetError("non-finite fused gradient")
    return loss, grads, gW, gb


def compute_mu(k: int, num_items: int, net=None, sequences=None,
               head: FusionHead | None = None,
               visual: np.ndarray | None = None) -> np.ndarray:
    """Prior means for every item under the current side-information weights."""
    mu = np.zeros((k, num_items))
    if net is None:
        return mu
    for j in range(num_items):
        seq = sequences[j]
        has_text = seq is not None and len(seq) > 0
        if head is None:
            if has_text:
                mu[:, j] = net.forward(seq)[0]
        else:
            phi = net.forward(seq)[0] if has_text else np.zeros(net.out_dim)
            mu[:, j] = head.forward(np.concatenate([phi, visual[j]]))
    return mu


def predict(U: np.ndarray, V: np.ndarray, i: int, j: int,
            clamp_to: float | None = None) -> float:
    value = float(U[:, i] @ V[:, j])
    if clamp_to is not None:
        value = min(max(value, 1.0), clamp_to)
    return value


def evaluate_rmse(U, V, user_idx, item_idx, ratings,
                  clamp_to: float | None = None) -> float:
    if len(ratings) == 0:
        raise EngineError("empty evaluation set")
    preds = np.einsum("ki,ki->i", U[:, user_idx], V[:, item_idx])
    if clamp_to is not None:
        preds = np.clip(preds, 1.0, clamp_to)
    resid = np.asarray(ratings, dtype=np.float64) - preds
    return math.sqrt(float(resid @ resid) / len(ratings))


@dataclass
class FitResult:
    """Best-validation iterate plus the full per-iteration trace."""

    U: np.ndarray
    V: np.ndarray
    mu: np.ndarray
    config: TrainConfig
    history: list          # dicts: iteration, loss, train_rmse, val_rmse
    half_sweep_losses: list  # (before_users, after_users, before_items, after_items)
    best_iteration: int
    val_rmse: float
    net_params: dict | None = None
    head: FusionHead | None = None

    def predict(self, i: int, j: int, clamp_to: float | None = None) -> float:
        return predict(self.U, self.V, i, j, clamp_to)


def _make_net(config: TrainConfig, num_embeddings: int, pad_index: int, out_dim: int):
    generator = rng(config.seed, "net-init")
    if config.uses_rcnn:
        return TextRcnn(num_embeddings, emb_dim=config.emb_dim, hidden=config.rcnn_hidden,
                        context_window=config.rcnn_context_window, out_dim=out_dim,
                        pad_index=pad_index, rng=generator)
    return TextCnn(num_embeddings, emb_dim=config.emb_dim, windows=config.cnn_windows,
                   filters=config.cnn_filters, hidden=config.proj_hidden,
                   out_dim=out_dim, pad_index=pad_index, rng=generator)


def _dropout_masks(generator, rate: float, dim: int, count: int):
    if rate <= 0.0:
        return None
    keep = (generator.random((count, dim)) >= rate) / (1.0 - rate)
    return list(keep)


def _net_norm_sq(net, head: FusionHead | None) -> float:
    total = 0.0
    if net is not None:
        total += sum(float(np.sum(v * v)) for v in net.params.values())
    if head is not None:
        total += head.norm_sq()
    return total


def _sweep_users(U, V, uorder, uptr, t_items, t_ratings, cw, lam_u, threads):
    def run(i):
        pos = uorder[uptr[i]:uptr[i + 1]]
        w = None if cw is None else cw[pos]
        U[:, i] = als_update_user(V, t_items[pos], t_ratings[pos], w, lam_u)

    if threads == 1:
        for i in range(U.shape[1]):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(U.shape[1])))


def _sweep_items(U, V, iorder, iptr, t_users, t_ratings, cw, lam_v, mu, threads):
    def run(j):
        pos = iorder[iptr[j]:iptr[j + 1]]
        w = None if cw is None else cw[pos]
        V[:, j] = als_update_item(U, t_users[pos], t_ratings[pos], w, lam_v, mu[:, j])

    if threads == 1:
        for j in range(V.shape[1]):
            run(j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(V.shape[1])))


def _network_epoch(net, head, trainable, sequences, visual, V, config, generator):
    order = generator.permutation(len(trainable))
    for start in range(0, len(order), config.batch_size):
        items = [trainable[o] for o in order[start:start + config.batch_size]]
        seqs = [sequences[j] for j in items]
        targets = V[:, items].T
        masks = _dropout_masks(generator, config.dropout, net.dropout_dim, len(items))
        # Step size is per item, not per batch, so stability does not
        # depend on batch_size.
        step = config.net_lr / len(items)
        if head is None:
            _, grads = branch_gradient(net, seqs, targets, config.lambda_v,
                                       config.lambda_w, masks)
            net.apply_gradients(grads, step)
        else:
            _, grads, gW, gb = fused_gradient(net, head, seqs, visual[items], targets,
                                              config.lambda_v, config.lambda_w, masks)
            net.apply_gradients(grads, step)
            head.W -= step * gW
            head.b -= step * gb


def fit(matrix: RatingsMatrix, split: DatasetSplit, config: TrainConfig,
        sequences: dict | None = None, visual: dict | None = None,
        pad_index: int | None = None, num_embeddings: int | None = None,
        embeddings: np.ndarray | None = None) -> FitResult:
    """Alternating optimization; returns the best-validation iterate.

    ``sequences`` maps raw item id to a token-index array and ``visual``
    maps raw item id to a feature vector; both may omit items (those fall
    back to zero features, with a count logged once). The token universe
    is described by ``num_embeddings``/``pad_index``; ``embeddings``
    optionally warm-starts the word rows.
    """
    if config.iterations < 1:
        raise EngineError("iterations >= 1 required")
    m, n, k = matrix.num_users, matrix.num_items, config.latent_dim

    t_users = matrix.user_idx[split.train]
    t_items = matrix.item_idx[split.train]
    t_ratings = matrix.rating[split.train]
    v_users = matrix.user_idx[split.validation]
    v_items = matrix.item_idx[split.validation]
    v_ratings = matrix.rating[split.validation]
    uorder, uptr = csr_index(t_users, m)
    iorder, iptr = csr_index(t_items, n)

    conf = (ConfidenceParams(alpha=config.alpha, distance=config.confidence_distance,
                             r_max=config.rating_max)
            if config.confidence_enabled else None)
    cw = confidence_factor(t_ratings, conf) if conf is not None else None

    net = head = None
    seq_list = vis_rows = None
    if config.uses_text:
        if sequences is None:
            raise EngineError(f"variant {config.variant!r} needs item documents")
        seq_list = [sequences.get(raw) for raw in matrix.item_ids]
        missing = sum(1 for s in seq_list if s is None or len(s) == 0)
        if missing:
            logger.warning("%d of %d items lack text; their text feature is zero",
                           missing, n)
        if num_embeddings is None:
            top = max((int(np.max(s)) for s in seq_list if s is not None and len(s)),
                      default=-1)
            num_embeddings = top + 3  # words, out-of-vocabulary, padding
        if pad_index is None:
            pad_index = num_embeddings - 1
        text_out = k
        if config.uses_visual:
            if visual is None:
                raise EngineError(f"variant {config.variant!r} needs visual features")
            text_out = config.cnn_filters * len(config.cnn_windows)
        net = _make_net(config, num_embeddings, pad_index, text_out)
        if embeddings is not None:
            net.set_embeddings(np.asarray(embeddings, dtype=np.float64))
        if config.uses_visual:
            dims = {len(np.ravel(v)) for v in visual.values()}
            if not dims:
                raise EngineError("visual feature map is empty")
            if len(dims) != 1:
                raise EngineError(f"inconsistent visual dimensions: {sorted(dims)}")
            vdim = dims.pop()
            vis_rows = np.zeros((n, vdim))
            missing_vis = 0
            for j, raw in enumerate(matrix.item_ids):
                vec = visual.get(raw)
                if vec is None:
                    missing_vis += 1
                else:
                    vis_rows[j] = np.ravel(vec)
            if missing_vis:
                logger.warning("%d of %d items lack visual features; using zeros",
                               missing_vis, n)
            head = FusionHead.create(k, text_out + vdim, rng(config.seed, "head-init"))

    trainable = [] if net is None else [j for j, s in enumerate(seq_list)
                                        if s is not None and len(s) > 0]

    init = rng(config.seed, "factors")
    U = init.uniform(0.0, 1.0, size=(k, m))
    V = init.uniform(0.0, 1.0, size=(k, n))
    mu = compute_mu(k, n, net, seq_list, head, vis_rows)

    def loss_now():
        return total_loss(t_users, t_items, t_ratings, U, V, mu, cw,
                          config.lambda_u, config.lambda_v, config.lambda_w,
                          _net_norm_sq(net, head))

    history = []
    half_losses = []
    best = None
    epoch_rng = rng(config.seed, "net-epochs")
    for it in range(1, config.iterations + 1):
        before_users = loss_now()
        _sweep_users(U, V, uorder, uptr, t_items, t_ratings, cw,
                     config.lambda_u, config.threads)
        after_users = loss_now()
        mu = compute_mu(k, n, net, seq_list, head, vis_rows)
        before_items = loss_now()
        _sweep_items(U, V, iorder, iptr, t_users, t_ratings, cw,
                     config.lambda_v, mu, config.threads)
        after_items = loss_now()
        half_losses.append((before_users, after_users, before_items, after_items))

        if net is not None and trainable:
            _network_epoch(net, head, trainable, seq_list, vis_rows, V, config, epoch_rng)
            mu = compute_mu(k, n, net, seq_list, head, vis_rows)

        loss = loss_now()
        train_rmse = evaluate_rmse(U, V, t_users, t_items, t_ratings)
        val_rmse = (evaluate_rmse(U, V, v_users, v_items, v_ratings)
                    if len(v_ratings) else float("nan"))
        history.append({"iteration": it, "loss": loss,
                        "train_rmse": train_rmse, "val_rmse": val_rmse})
        score = val_rmse if not math.isnan(val_rmse) else train_rmse
        if best is None or score < best[0]:
            best = (score, it, U.copy(), V.copy(), mu.copy(),
                    None if net is None else {name: v.copy() for name, v in net.params.items()},
                    None if head is None else head.copy())

    score, it, U_b, V_b, mu_b, net_b, head_b = best
    return FitResult(U=U_b, V=V_b, mu=mu_b, config=config, history=history,
                     half_sweep_losses=half_losses, best_iteration=it,
                     val_rmse=score, net_params=net_b, head=head_b)


@dataclass
class GridSearchResult:
    best_lambda_u: float
    best_lambda_v: float
    best_val_rmse: float
    surface: list = field(default_factory=list)  # (lambda_u, lambda_v, val_rmse)


DEFAULT_GRID = (1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0, 10000.0)


def grid_search(matrix: RatingsMatrix, split: DatasetSplit, config: TrainConfig,
                lambda_u_grid=DEFAULT_GRID, lambda_v_grid=DEFAULT_GRID,
                **fit_kwargs) -> GridSearchResult:
    """Two independent 1-D sweeps: lambda_u first, then lambda_v."""
    if not lambda_u_grid or not lambda_v_grid:
        raise EngineError("grids must be non-empty")
    surface = []

    def run(lu, lv):
        res = fit(matrix, split, replace(config, lambda_u=lu, lambda_v=lv), **fit_kwargs)
        surface.append((float(lu), float(lv), res.val_rmse))
        return res.val_rmse

    best_u, best_u_score = None, math.inf
    for lu in lambda_u_grid:
        score = run(lu, config.lambda_v)
        if score < best_u_score:
            best_u, best_u_score = float(lu), score
    best_v, best_score = None, math.inf
    for lv in lambda_v_grid:
        score = run(best_u, lv)
        if score < best_score:
            best_v, best_score = float(lv), score
    return GridSearchResult(best_lambda_u=best_u, best_lambda_v=best_v,
                            best_val_rmse=best_score, surface=surface)


def run_repeats(matrix: RatingsMatrix, config: TrainConfig,
                sequences: dict | None = None, visual: dict | None = None,
                **fit_kwargs) -> tuple[float, list]:
    """Independent seeded runs on fresh splits; mean held-out RMSE."""
    rmses = []
    for rep in range(config.repeats):
        seed = config.seed + rep
        split = split_dataset(matrix, seed=seed)
        res = fit(matrix, split, replace(config, seed=seed), sequences, visual,
                  **fit_kwargs)
        te = split.test
        rmses.append(evaluate_rmse(res.U, res.V, matrix.user_idx[te],
                                   matrix.item_idx[te], matrix.rating[te]))
    return float(np.mean(rmses)), rmses
