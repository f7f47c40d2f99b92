"""Sentence encoders: a vanilla CNN and the claim-aware attentive convolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from twowing import autodiff as ad
from twowing.autodiff import Tensor
from twowing.errors import ArgumentError


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class ConvParams:
    """Filter bank for a width-``w`` convolution over ``d``-dim states."""

    W: Tensor  # d x (w*d)
    b: Tensor  # d

    @classmethod
    def init(cls, d: int, width: int, rng: np.random.Generator, name: str) -> "ConvParams":
        return cls(
            Tensor(glorot(rng, d, width * d), requires_grad=True, name=f"{name}.W"),
            Tensor(np.zeros(d), requires_grad=True, name=f"{name}.b"),
        )

    def tensors(self):
        return [self.W, self.b]


def vanilla_encode(T: Tensor, cnn: ConvParams, width: int = 3) -> Tensor:
    """Convolution + max-pooling over time of a ``d x l`` map."""
    if T.ndim != 2 or T.shape[1] == 0:
        raise ArgumentError("cannot encode an empty text")
    return ad.maxpool_over_time(ad.conv1d(T, cnn.W, cnn.b, width))


def attentive_context(h: Tensor, X: Tensor) -> Tensor:
    """Context vector ``sum_z softmax_z(h . x_z) x_z`` for one word state ``h``."""
    if X.ndim != 2 or X.shape[1] == 0:
        raise ArgumentError("attention over an empty claim")
    d = h.shape[0]
    return ad.reshape(ad.attention(ad.reshape(h, (d, 1)), X), (d,))


def f_int(S: Tensor, X: Tensor, att: ConvParams) -> Tensor:
    """Claim-aware representation of text ``S`` given context text ``X``.

    Each word of ``S`` gets a context vector from dot-product attention over
    the columns of ``X``; the word, its two neighbours (zero-padded) and that
    context go through ``tanh(W [s_{j-1}; s_j; s_{j+1}; c_j] + b)`` and the
    results are max-pooled over ``j``. ``att.W`` is ``d x 4d``.
    """
    if S.ndim != 2 or S.shape[1] == 0 or X.ndim != 2 or X.shape[1] == 0:
        raise ArgumentError("f_int needs two non-empty feature maps")
    C = ad.attention(S, X)
    return ad.maxpool_over_time(attentive_conv(S, C, att))


def attentive_conv(S: Tensor, C: Tensor, att: ConvParams) -> Tensor:
    """Width-3 convolution over ``S`` with an extra per-position context block ``C``."""
    return _attconv(S, C, att.W, att.b)


def _attconv(S: Tensor, C: Tensor, W: Tensor, b: Tensor) -> Tensor:
    d, l = S.shape
    if W.shape != (b.shape[0], 4 * d) or C.shape != S.shape:
        raise ArgumentError(f"attentive conv: W{W.shape}, b{b.shape} do not fit S{S.shape}")
    # [s_{j-1}; s_j; s_{j+1}] via the plain convolution windows, then the context rows
    U = np.concatenate([ad._windows(S.data, 3), C.data], axis=0)
    Y = np.tanh(W.data @ U + b.data[:, None])

    def backward(g):
        dZ = g * (1.0 - Y * Y)
        if W.requires_grad:
            ad._accumulate(W, dZ @ U.T)
        if b.requires_grad:
            ad._accumulate(b, dZ.sum(axis=1))
        if S.requires_grad or C.requires_grad:
            dU = W.data.T @ dZ
            if S.requires_grad:
                dpad = np.zeros((d, l + 2))
                for k in range(3):
                    dpad[:, k:k + l] += dU[k * d:(k + 1) * d]
                ad._accumulate(S, dpad[:, 1:1 + l])
            if C.requires_grad:
                ad._accumulate(C, dU[3 * d:])

    return ad._result(Y, (S, C, W, b), backward)
