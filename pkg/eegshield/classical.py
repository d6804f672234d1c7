"""
Classical task pipelines: xDAWN + logistic regression (ERP), CSP + logistic
regression (MI) and training-free CCA (SSVEP).

Every covariance gets a ridge of ``ridge * trace / c`` before any
generalized eigenproblem is solved.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from sklearn.linear_model import LogisticRegression

from .classifiers import ModelSpec, TrainedClassifier, check_labels, labels_from_proba
from .error_handler import ModelError

logger = logging.getLogger(__name__)


def _regularize(cov: np.ndarray, ridge: float) -> np.ndarray:
    c = cov.shape[0]
    return cov + ridge * np.trace(cov) / c * np.eye(c)


def _mean_covariance(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.einsum("nct,ndt->cd", x, x) / (x.shape[0] * x.shape[2])


def _binary(x: np.ndarray, y: np.ndarray, arch: str) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ModelError(f"{arch} expects trials shaped (N, c, t), got {x.shape}")
    y = check_labels(y, 2)
    if y.size != x.shape[0]:
        raise ModelError(f"{x.shape[0]} trials but {y.size} labels")
    return x, y


def _logistic(features: np.ndarray, y: np.ndarray, C: float) -> LogisticRegression:
    lr = LogisticRegression(C=C, max_iter=1000)
    lr.fit(features, y)
    return lr


def _lr_state(lr: LogisticRegression) -> Dict[str, np.ndarray]:
    return {"lr_coef": lr.coef_, "lr_intercept": lr.intercept_}


@dataclass(eq=False)
class XdawnPipeline:
    filters: np.ndarray  # [c, n_filters]
    lr: LogisticRegression

    def features(self, x: np.ndarray) -> np.ndarray:
        projected = np.einsum("cf,nct->nft", self.filters, np.asarray(x, dtype=np.float64))
        return projected.reshape(projected.shape[0], -1)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.lr.predict_proba(self.features(x))

    def state(self) -> Dict[str, np.ndarray]:
        return {"filters": self.filters, **_lr_state(self.lr)}


def xdawn_filters(x: np.ndarray, y: np.ndarray, n_filters: int, target: int = 2,
                  ridge: float = 1e-6) -> np.ndarray:
    """Spatial filters maximizing evoked-response power over total power.

    Solves ``(P P^T / t) w = lambda (Sigma_x + ridge) w`` where ``P`` is the
    mean ``target`` trial and keeps the ``n_filters`` largest eigenvectors.
    """
    evoked = x[y == target].mean(axis=0)
    signal_cov = evoked @ evoked.T / evoked.shape[1]
    total_cov = _regularize(_mean_covariance(x), ridge)
    eigvals, eigvecs = linalg.eigh(signal_cov, total_cov)
    order = np.argsort(eigvals)[::-1][:n_filters]
    return eigvecs[:, order]


def fit_xdawn_lr(x: np.ndarray, y: np.ndarray, n_filters: int = 4, C: float = 1.0,
                 ridge: float = 1e-6, label_space: str = "ERP") -> TrainedClassifier:
    """xDAWN filtering then logistic regression on the filtered, vectorized trials.

    Raises:
        ModelError: non-binary or single-class labels, ``n_filters`` > channels
    """
    x, y = _binary(x, y, "XDAWN_LR")
    if not 1 <= n_filters <= x.shape[1]:
        raise ModelError(f"n_filters must lie in 1..{x.shape[1]} channels, got {n_filters}")
    filters = xdawn_filters(x, y, n_filters, ridge=ridge)
    pipeline = XdawnPipeline(filters=filters, lr=LogisticRegression())
    pipeline.lr = _logistic(pipeline.features(x), y, C)
    spec = ModelSpec("XDAWN_LR", x.shape[1:], 2, {"n_filters": n_filters, "C": C, "ridge": ridge})
    logger.info(f"Fitted xDAWN+LR with {n_filters} filters on {x.shape[0]} trials")
    return TrainedClassifier(spec=spec, pipeline=pipeline, label_space=label_space)


@dataclass(eq=False)
class CspPipeline:
    filters: np.ndarray  # [c, 2 * n_pairs]
    eigenvalues: np.ndarray
    class_covariances: np.ndarray  # [2, c, c], regularized
    lr: LogisticRegression

    def features(self, x: np.ndarray) -> np.ndarray:
        projected = np.einsum("cf,nct->nft", self.filters, np.asarray(x, dtype=np.float64))
        return np.log(np.maximum(projected.var(axis=2), 1e-12))

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.lr.predict_proba(self.features(x))

    def state(self) -> Dict[str, np.ndarray]:
        return {"filters": self.filters, "eigenvalues": self.eigenvalues,
                "class_covariances": self.class_covariances, **_lr_state(self.lr)}


def csp_filters(cov1: np.ndarray, cov2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized eigenpairs of ``cov1 w = lambda (cov1 + cov2) w``.

    Eigenvalues ascend within [0, 1]; the eigenvector matrix ``W`` satisfies
    ``W^T (cov1 + cov2) W = I``.
    """
    eigvals, eigvecs = linalg.eigh(cov1, cov1 + cov2)
    return eigvals, eigvecs


def fit_csp_lr(x: np.ndarray, y: np.ndarray, n_pairs: int = 2, C: float = 1.0,
               ridge: float = 1e-6, label_space: str = "MI") -> TrainedClassifier:
    """CSP filtering, log-variance features and logistic regression.

    Raises:
        ModelError: non-binary or single-class labels, too many filter pairs
    """
    x, y = _binary(x, y, "CSP_LR")
    c = x.shape[1]
    if not 1 <= 2 * n_pairs <= c:
        raise ModelError(f"n_pairs must satisfy 1 <= 2*n_pairs <= {c}, got {n_pairs}")
    covs = np.stack([_regularize(_mean_covariance(x[y == k]), ridge) for k in (1, 2)])
    eigvals, eigvecs = csp_filters(covs[0], covs[1])
    keep = np.r_[np.arange(n_pairs), np.arange(c - n_pairs, c)]
    pipeline = CspPipeline(filters=eigvecs[:, keep], eigenvalues=eigvals[keep],
                           class_covariances=covs, lr=LogisticRegression())
    pipeline.lr = _logistic(pipeline.features(x), y, C)
    spec = ModelSpec("CSP_LR", x.shape[1:], 2, {"n_pairs": n_pairs, "C": C, "ridge": ridge})
    logger.info(f"Fitted CSP+LR with {n_pairs} filter pairs on {x.shape[0]} trials")
    return TrainedClassifier(spec=spec, pipeline=pipeline, label_space=label_space)


def cca_references(frequency: float, n_harmonics: int, n_samples: int, fs: float) -> np.ndarray:
    """``[2 * h, t]`` sine/cosine templates; harmonics at or above Nyquist are dropped."""
    time = np.arange(n_samples) / fs
    rows = []
    for h in range(1, n_harmonics + 1):
        if h > 1 and h * frequency >= fs / 2:
            break
        rows.append(np.sin(2 * np.pi * h * frequency * time))
        rows.append(np.cos(2 * np.pi * h * frequency * time))
    return np.array(rows)


def _orthonormal_basis(a: np.ndarray) -> np.ndarray:
    """Column basis of ``a`` ([t, k]); empty when ``a`` is numerically zero."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if not s.size or s[0] <= 1e-12:
        return u[:, :0]
    return u[:, s > s[0] * 1e-10]


def max_canonical_correlation(trial: np.ndarray, reference: np.ndarray) -> float:
    """Largest canonical correlation between ``[c, t]`` and ``[k, t]``; 0 for constant input."""
    xa = _orthonormal_basis((trial - trial.mean(axis=1, keepdims=True)).T)
    ya = _orthonormal_basis((reference - reference.mean(axis=1, keepdims=True)).T)
    if not xa.shape[1] or not ya.shape[1]:
        return 0.0
    s = np.linalg.svd(xa.T @ ya, compute_uv=False)
    return float(np.clip(s[0], 0.0, 1.0))


def cca_correlations(x: np.ndarray, frequencies: Sequence[float], n_harmonics: int,
                     fs: float) -> np.ndarray:
    """``[N, len(frequencies)]`` maximal canonical correlations."""
    x = np.asarray(x, dtype=np.float64)
    if not len(frequencies):
        raise ModelError("CCA needs at least one candidate frequency")
    too_high = [f for f in frequencies if f >= fs / 2]
    if too_high:
        raise ModelError(f"CCA frequencies {too_high} are not below Nyquist ({fs / 2} Hz)")
    refs = [cca_references(f, n_harmonics, x.shape[-1], fs) for f in frequencies]
    return np.array([[max_canonical_correlation(trial, ref) for ref in refs] for trial in x])


def cca_classify(x: np.ndarray, frequencies: Sequence[float], n_harmonics: int = 2,
                 fs: float = 128.0) -> np.ndarray:
    """1-based index of the best-correlated frequency per trial, ties to the lowest."""
    return labels_from_proba(cca_correlations(x, frequencies, n_harmonics, fs))


@dataclass(eq=False)
class CcaPipeline:
    frequencies: np.ndarray
    n_harmonics: int
    sampling_rate: float

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        corr = cca_correlations(x, self.frequencies.tolist(), self.n_harmonics, self.sampling_rate)
        totals = corr.sum(axis=1, keepdims=True)
        uniform = np.full_like(corr, 1.0 / corr.shape[1])
        return np.where(totals > 0, corr / np.where(totals > 0, totals, 1.0), uniform)

    def state(self) -> Dict[str, np.ndarray]:
        return {"frequencies": self.frequencies,
                "n_harmonics": np.array([self.n_harmonics]),
                "sampling_rate": np.array([self.sampling_rate])}


def fit_cca(input_shape: Tuple[int, int], frequencies: Sequence[float], n_harmonics: int = 2,
            fs: float = 128.0, label_space: str = "SSVEP") -> TrainedClassifier:
    """Wrap the training-free CCA recognizer in the classifier interface."""
    if len(frequencies) < 2:
        raise ModelError("CCA needs at least two candidate frequencies")
    too_high = [f for f in frequencies if f >= fs / 2]
    if too_high:
        raise ModelError(f"CCA frequencies {too_high} are not below Nyquist ({fs / 2} Hz)")
    spec = ModelSpec("CCA", input_shape, len(frequencies),
                     {"n_harmonics": n_harmonics, "frequencies": [float(f) for f in frequencies],
                      "sampling_rate": float(fs)})
    pipeline = CcaPipeline(np.asarray(frequencies, dtype=np.float64), int(n_harmonics), float(fs))
    return TrainedClassifier(spec=spec, pipeline=pipeline, label_space=label_space)


def fit_classical(spec: ModelSpec, x: np.ndarray, y: Optional[np.ndarray],
                  label_space: str = "") -> TrainedClassifier:
    """Dispatch on ``spec.arch`` to the matching fit function."""
    if spec.arch == "XDAWN_LR":
        return fit_xdawn_lr(x, y, spec.hp("n_filters"), spec.hp("C"), spec.hp("ridge"), label_space)
    if spec.arch == "CSP_LR":
        return fit_csp_lr(x, y, spec.hp("n_pairs"), spec.hp("C"), spec.hp("ridge"), label_space)
    if spec.arch == "CCA":
        return fit_cca(spec.input_shape, spec.hp("frequencies"), spec.hp("n_harmonics"),
                       spec.hp("sampling_rate"), label_space)
    raise ModelError(f"{spec.arch} is not a classical pipeline")
