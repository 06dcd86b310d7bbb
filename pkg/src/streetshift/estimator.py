"""scikit-learn style wrappers around the translation model and domain builder."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import geo
from .unit import DEFAULT_LAMBDAS, UnitConfig, build_model, reconstruct, train, translate


def check_images(X, size=None, name="X") -> np.ndarray:
    """Validate an image stack: NxHxWx3, square, values in [0, 255] -> uint8."""
    arr = np.asarray(X)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (n, h, w, 3); got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if arr.shape[1] != arr.shape[2]:
        raise ValueError(f"{name} images must be square; got {arr.shape[1]}x{arr.shape[2]}")
    if size is not None and arr.shape[1] != size:
        raise ValueError(f"{name} images are {arr.shape[1]}px; estimator expects {size}px")
    if arr.dtype != np.uint8:
        if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 255:
            raise ValueError(f"{name} values must lie in [0, 255]")
        arr = np.rint(arr).astype(np.uint8)
    return arr


def check_domains(y, n):
    """Map domain labels to 0 (A) / 1 (B). Accepts 0/1 or 'A'/'B'."""
    y = np.asarray(y).ravel()
    if len(y) != n:
        raise ValueError(f"y has {len(y)} labels for {n} images")
    labels = np.array([str(v).upper() for v in y])
    lut = {"0": 0, "A": 0, "1": 1, "B": 1}
    bad = sorted(set(labels) - set(lut))
    if bad:
        raise ValueError(f"unknown domain labels {bad}; use 0/1 or 'A'/'B'")
    return np.array([lut[v] for v in labels])


class UnitTranslator(TransformerMixin, BaseEstimator):
    """Unpaired image-to-image translator with a shared latent space.

    ``fit(X, y)`` takes one stack of uint8 images and a domain label per
    image (0/'A' or 1/'B'). ``transform`` translates in ``direction``;
    ``inverse_transform`` goes the other way.
    """

    def __init__(self, image_size=32, base_width=16, dis_width=4, latent_channels=32, n_res=1,
                 lambdas=DEFAULT_LAMBDAS, steps=10000, lr=1e-4, batch_size=1, direction="A2B", random_state=0):
        self.image_size = image_size
        self.base_width = base_width
        self.dis_width = dis_width
        self.latent_channels = latent_channels
        self.n_res = n_res
        self.lambdas = lambdas
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.direction = direction
        self.random_state = random_state

    def _config(self):
        return UnitConfig(image_size=self.image_size, base_width=self.base_width, dis_width=self.dis_width,
                          latent_channels=self.latent_channels, n_res=self.n_res, lambdas=tuple(self.lambdas),
                          seed=int(self.random_state), lr=self.lr, batch_size=self.batch_size)

    def fit(self, X, y):
        X = check_images(X, self.image_size)
        d = check_domains(y, len(X))
        if not (d == 0).any() or not (d == 1).any():
            raise ValueError("fit needs images from both domains")
        self.model_ = build_model(self._config())
        self.loss_trace_ = train(self.model_, X[d == 0], X[d == 1], int(self.steps), seed=int(self.random_state))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _direction(self, inverse=False):
        d = str(self.direction).upper()
        if d not in ("A2B", "B2A"):
            raise ValueError(f"direction must be 'A2B' or 'B2A', got {self.direction!r}")
        if inverse:
            d = "B2A" if d == "A2B" else "A2B"
        return d

    def transform(self, X):
        check_is_fitted(self, "model_")
        return translate(self.model_, check_images(X, self.image_size), self._direction())

    def inverse_transform(self, X):
        check_is_fitted(self, "model_")
        return translate(self.model_, check_images(X, self.image_size), self._direction(inverse=True))

    def reconstruct(self, X, domain="A"):
        check_is_fitted(self, "model_")
        return reconstruct(self.model_, check_images(X, self.image_size), domain)


class DomainSelector(BaseEstimator):
    """Decile selection over outcome records, then nearest-image matching.

    ``fit(records)`` picks the best/worst locations; ``transform(index)``
    matches them against an image index and returns a DomainPair.
    """

    def __init__(self, fraction=0.10, radius_m=50.0):
        self.fraction = fraction
        self.radius_m = radius_m

    def fit(self, records, y=None):
        records = list(records)
        self.best_, self.worst_ = geo.select_deciles(records, self.fraction)
        self.records_ = records
        return self

    def transform(self, index):
        check_is_fitted(self, "best_")
        return geo.build_domain_pair(self.records_, list(index), self.fraction, self.radius_m)

    def fit_transform(self, records, index):
        return self.fit(records).transform(index)
