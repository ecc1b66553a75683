"""Uncertainty signals: state novelty (one-class SVM), policy and value disagreement."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels

ND_WINDOW = 10
OCSVM_FORMAT = "safeabr-ocsvm/1"


class OcSvmError(RuntimeError):
    pass


@dataclass(frozen=True)
class UncertaintyScore:
    value: float
    scheme: str


# --------------------------------------------------------------------------
# novelty-detection features
# --------------------------------------------------------------------------

def nd_features(throughput_history: Sequence[float], k: int, window: int = ND_WINDOW) -> Optional[np.ndarray]:
    """Concatenated (mean, std) of the ``window``-sample windows ending at each of the last ``k`` steps.

    Ordered oldest to newest.  Returns ``None`` while the history is shorter
    than ``window + k - 1``.
    """
    need = window + k - 1
    h = np.asarray(throughput_history, dtype=float)
    if h.size < need:
        return None
    return kernels.window_mean_std(np.ascontiguousarray(h[-need:]), window).ravel()


def nd_training_samples(histories: Sequence[Sequence[float]], k: int, window: int = ND_WINDOW,
                        stride: int = 1) -> np.ndarray:
    """Every ``nd_features`` sample (at the given stride) along each history."""
    rows = []
    for h in histories:
        h = np.ascontiguousarray(h, dtype=float)
        if h.size < window + k - 1:
            continue
        pairs = kernels.window_mean_std(h, window)
        for s in range(0, pairs.shape[0] - k + 1, stride):
            rows.append(pairs[s:s + k].ravel())
    if not rows:
        raise OcSvmError("no history long enough to build a sample")
    return np.array(rows)


# --------------------------------------------------------------------------
# one-class SVM
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OcSvmModel:
    support_vectors: np.ndarray   # standardised coordinates
    alphas: np.ndarray
    rho: float
    kernel_gamma: float
    nu: float
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    k: int = 1
    window: int = ND_WINDOW
    n_train: int = 0
    iterations: int = 0
    kkt_gap: float = 0.0

    @property
    def dim(self) -> int:
        return self.scaler_mean.size

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.scaler_mean) / self.scaler_std

    def decision(self, X: np.ndarray) -> np.ndarray:
        Z = np.ascontiguousarray(self.standardize(X))
        return kernels.rbf_decision(Z, self.support_vectors, self.alphas, self.kernel_gamma, self.rho)


def fit_ocsvm(samples, nu: float = 0.1, kernel_gamma: Optional[float] = None, tol: float = 1e-4,
              max_iter: Optional[int] = None, k: int = 1, window: int = ND_WINDOW) -> OcSvmModel:
    """Schölkopf one-class SVM via SMO on the dual.

    minimise 1/2 a'Ka  subject to  0 <= a_i <= 1/(nu n),  sum a_i = 1,
    with an RBF kernel on standardised features.  Iterates until the maximal
    violating pair's gradient gap drops below ``tol``.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise OcSvmError("samples must be a 2-D array")
    n, d = X.shape
    if n < 2:
        raise OcSvmError("need at least two samples")
    if not 0 < nu <= 1:
        raise OcSvmError("nu must lie in (0, 1]")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std <= 1e-12] = 1.0
    Z = np.ascontiguousarray((X - mean) / std)
    if kernel_gamma is None:
        var = float(Z.var())
        kernel_gamma = 1.0 / (d * var) if var > 0 else 1.0
    if not kernel_gamma > 0:
        raise OcSvmError("kernel_gamma must be positive")
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    n_full = min(int(math.floor(nu * n + 1e-9)), n)
    alpha[:n_full] = C
    if n_full < n:
        alpha[n_full] = min(C, max(0.0, 1.0 - n_full * C))
    K = kernels.rbf_gram(Z, kernel_gamma)
    if max_iter is None:
        max_iter = max(100_000, 100 * n)
    iterations, gap, g = kernels.smo_one_class(K, alpha, C, tol, max_iter)
    if gap >= tol:
        raise OcSvmError(f"SMO did not converge in {iterations} iterations (gap {gap:.3g} > tol {tol:g})")
    free = (alpha > 0.0) & (alpha < C)
    if free.any():
        rho = float(g[free].mean())
    else:
        at_bound = g[alpha >= C]
        at_zero = g[alpha <= 0.0]
        hi = at_bound.max() if at_bound.size else g.min()
        lo = at_zero.min() if at_zero.size else g.max()
        rho = 0.5 * (hi + lo)
    sv = alpha > 0.0
    return OcSvmModel(np.ascontiguousarray(Z[sv]), alpha[sv].copy(), rho, float(kernel_gamma), float(nu),
                      mean, std, k, window, n, int(iterations), float(gap))


def ocsvm_score(model: OcSvmModel, x) -> tuple[float, bool]:
    score = float(model.decision(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return score, score < 0.0


def save_ocsvm(model: OcSvmModel, path) -> None:
    def row(values):
        return " ".join(repr(float(v)) for v in values)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {OCSVM_FORMAT}\n")
        fh.write("# rows after the header: alpha followed by the standardised support vector\n")
        fh.write(f"nu {float(model.nu)!r}\n")
        fh.write(f"gamma {float(model.kernel_gamma)!r}\n")
        fh.write(f"rho {float(model.rho)!r}\n")
        fh.write(f"k {model.k}\n")
        fh.write(f"window {model.window}\n")
        fh.write(f"n_train {model.n_train}\n")
        fh.write(f"dim {model.dim}\n")
        fh.write(f"scaler_mean {row(model.scaler_mean)}\n")
        fh.write(f"scaler_std {row(model.scaler_std)}\n")
        fh.write(f"support {len(model.alphas)}\n")
        for a, v in zip(model.alphas, model.support_vectors):
            fh.write(f"{float(a)!r} {row(v)}\n")


def load_ocsvm(path) -> OcSvmModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != f"# {OCSVM_FORMAT}":
        raise OcSvmError(f"{path}: not an OC-SVM model file")
    body = [ln for ln in lines if not ln.startswith("#")]
    head = {}
    idx = 0
    while idx < len(body):
        key, _, rest = body[idx].partition(" ")
        head[key] = rest
        idx += 1
        if key == "support":
            break
    try:
        dim = int(head["dim"])
        n_sv = int(head["support"])
        rows = np.array([[float(v) for v in ln.split()] for ln in body[idx:idx + n_sv]]).reshape(n_sv, dim + 1)
        return OcSvmModel(np.ascontiguousarray(rows[:, 1:]), rows[:, 0].copy(), float(head["rho"]),
                          float(head["gamma"]), float(head["nu"]),
                          np.array([float(v) for v in head["scaler_mean"].split()]),
                          np.array([float(v) for v in head["scaler_std"].split()]),
                          int(head["k"]), int(head["window"]), int(head["n_train"]))
    except (KeyError, ValueError) as exc:
        raise OcSvmError(f"{path}: malformed model file ({exc})") from None


# --------------------------------------------------------------------------
# ensemble disagreement
# --------------------------------------------------------------------------

KL_EPS = 1e-8


def kl(p, q, eps: float = KL_EPS) -> float:
    """KL(p || q) in nats, both sides smoothed by ``eps`` and renormalised."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions differ in length")
    p = (p + eps) / (p + eps).sum()
    q = (q + eps) / (q + eps).sum()
    return max(0.0, float(np.sum(p * np.log(p / q))))


def _drop_farthest(distances: np.ndarray, drop: int) -> np.ndarray:
    """Indices kept after removing the ``drop`` largest distances (lower index goes first on ties)."""
    order = np.argsort(-distances, kind="stable")
    return np.sort(order[drop:])


def u_pi(dists, drop: int = 2, recompute_mean: bool = True) -> UncertaintyScore:
    """Summed KL(member || mean) over the members left after discarding the ``drop`` farthest."""
    P = np.asarray(dists, dtype=float)
    if P.ndim != 2 or P.shape[0] < drop + 2:
        raise ValueError(f"u_pi needs at least {drop + 2} distributions to leave two after the drop")
    mean = P.mean(axis=0)
    keep = _drop_farthest(np.array([kl(p, mean) for p in P]), drop)
    ref = P[keep].mean(axis=0) if recompute_mean else mean
    return UncertaintyScore(float(sum(kl(P[i], ref) for i in keep)), "A")


def u_v(values, drop: int = 2, recompute_mean: bool = True) -> UncertaintyScore:
    """Summed |v - mean| over the values left after discarding the ``drop`` farthest."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < drop + 2:
        raise ValueError(f"u_v needs at least {drop + 2} values to leave two after the drop")
    keep = _drop_farthest(np.abs(v - v.mean()), drop)
    ref = v[keep].mean() if recompute_mean else v.mean()
    return UncertaintyScore(float(np.abs(v[keep] - ref).sum()), "V")
