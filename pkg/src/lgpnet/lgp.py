"""Log Gaussian probability (LGP) features.

A frame's LGP vector stacks its per-component log densities under a trained
GMM, so the feature width equals the mixture order.  Two forms exist:

* full:  y_i = log p_i(x)
* fast:  y_i = -1/2 sum_d x_d^2 / var_id + sum_d x_d mu_id / var_id

The fast form drops a per-component constant, which mean/variance
normalization over the training set cancels exactly, so both forms yield
the same normalized feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio
from .gmm import Gmm

STD_FLOOR = 1e-8

_FORM_CODES = {"full": 0.0, "fast": 1.0}


@dataclass
class LgpNormStats:
    """Per-component mean/std of raw LGP values over the training frames."""

    mean: np.ndarray
    std: np.ndarray
    form: str

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be matching vectors")
        if np.any(self.std <= 0.0):
            raise ValueError("std must be strictly positive (floored)")
        if self.form not in _FORM_CODES:
            raise ValueError(f"unknown LGP form {self.form!r}")

    @property
    def order(self) -> int:
        return self.mean.shape[0]

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {
            "lgp_mean": self.mean,
            "lgp_std": self.std,
            "form": np.array([_FORM_CODES[self.form]]),
        }

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "LgpNormStats":
        try:
            mean = tensors["lgp_mean"]
            std = tensors["lgp_std"]
            code = float(tensors["form"][0])
        except KeyError as exc:
            raise ValueError(f"stats checkpoint is missing tensor {exc}") from exc
        for name, value in _FORM_CODES.items():
            if code == value:
                return cls(mean, std, name)
        raise ValueError(f"unknown form code {code!r}")

    def save(self, path) -> None:
        tensorio.save_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "LgpNormStats":
        return cls.from_tensors(tensorio.load_tensors(path))

    def fingerprint(self) -> bytes:
        return tensorio.fingerprint(self.to_tensors())


def lgp_frames_full(gmm: Gmm, frames: np.ndarray) -> np.ndarray:
    """Raw full-form LGP rows for each frame; shape (T, M)."""
    return gmm.component_log_densities(frames)


def lgp_frames_fast(gmm: Gmm, frames: np.ndarray) -> np.ndarray:
    """Raw fast-form LGP rows; differs from the full form by a constant per component."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] != gmm.dim:
        raise ValueError(f"frames have dim {frames.shape[1]}, expected {gmm.dim}")
    inv_var = 1.0 / gmm.variances
    return -0.5 * (frames * frames) @ inv_var.T + frames @ (gmm.means * inv_var).T


def lgp_frame_full(gmm: Gmm, x: np.ndarray) -> np.ndarray:
    return lgp_frames_full(gmm, np.asarray(x)[None, :])[0]


def lgp_frame_fast(gmm: Gmm, x: np.ndarray) -> np.ndarray:
    return lgp_frames_fast(gmm, np.asarray(x)[None, :])[0]


_RAW_FORMS = {"full": lgp_frames_full, "fast": lgp_frames_fast}


def fit_norm_stats(gmm: Gmm, frames: np.ndarray, form: str = "fast") -> LgpNormStats:
    """Population mean/std of raw LGP values over pooled training frames.

    ``frames`` is the concatenation of every training utterance, (N, D).
    Standard deviations are floored at ``STD_FLOOR`` so degenerate
    components cannot produce non-finite features.
    """
    if form not in _RAW_FORMS:
        raise ValueError(f"unknown LGP form {form!r}")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise ValueError("need at least two training frames")
    raw = _RAW_FORMS[form](gmm, frames)
    mean = raw.mean(axis=0)
    std = np.maximum(raw.std(axis=0), STD_FLOOR)   # population convention (divide by N)
    return LgpNormStats(mean=mean, std=std, form=form)


def extract_lgp(gmm: Gmm, stats: LgpNormStats, frames: np.ndarray,
                form: str | None = None) -> np.ndarray:
    """Normalized LGP feature map for one utterance; shape (M, T).

    ``stats`` must come from the same GMM and the same form; the component
    count is checked, and the form defaults to the one the stats were
    fitted with.
    """
    form = form or stats.form
    if form != stats.form:
        raise ValueError(f"stats were fitted for form {stats.form!r}, not {form!r}")
    if stats.order != gmm.order:
        raise ValueError(
            f"stats cover {stats.order} components but the GMM has {gmm.order}"
        )
    raw = _RAW_FORMS[form](gmm, frames)            # (T, M)
    return ((raw - stats.mean[None, :]) / stats.std[None, :]).T
