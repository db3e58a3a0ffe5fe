"""Ready-made SDE systems used by the tests and the command line."""
from __future__ import annotations

import numpy as np

from .sde_core import Convention, EllipticOperator, SdeSystem, elliptic_to_sde

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def _eye_field(x, scale):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    return scale[..., None, None] * np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n))


def bm(dim: int = 2) -> SdeSystem:
    """Standard Brownian motion (generator ``1/2 Laplacian``)."""
    return SdeSystem(dim, dim, drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                     diffusion=lambda x: _eye_field(x, np.ones(np.shape(x)[:-1])), name=f"bm{dim}")


def zero(dim: int = 2) -> SdeSystem:
    """The trivial system; every path stays put."""
    return SdeSystem(dim, 1, drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                     diffusion=lambda x: np.zeros(np.shape(x) + (1,)), name="zero")


def linear_growth(K: float = 1.0) -> SdeSystem:
    """Planar system with ``|X| <= K(1+|x|)``: ``X = K sqrt(1+|x|^2) I``, ``A = K J x``."""

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return _eye_field(x, K * np.sqrt(1.0 + np.sum(x * x, axis=-1)))

    def drift(x):
        return K * np.asarray(x, dtype=float) @ _J.T

    return SdeSystem(2, 2, drift=drift, diffusion=diffusion, name=f"linear_growth(K={K})")


def sublinear(alpha: float, K: float = 1.0) -> SdeSystem:
    """Planar system with ``|X|, |A| <= K(1+|x|)^alpha`` (rotational drift, isotropic noise)."""

    def weight(x):
        return K * (1.0 + np.sum(x * x, axis=-1)) ** (alpha / 2)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return _eye_field(x, weight(x))

    def drift(x):
        x = np.asarray(x, dtype=float)
        w = weight(x) / np.sqrt(1.0 + np.sum(x * x, axis=-1))
        return w[..., None] * (x @ _J.T)

    return SdeSystem(2, 2, drift=drift, diffusion=diffusion, name=f"sublinear(alpha={alpha}, K={K})")


def rotation_noise() -> SdeSystem:
    """Stratonovich ``dx = J x o dB``: ``x_t = e^{i B_t} x_0`` stays on its circle.

    Written in Itô form the same process is ``dx = J x dB - x/2 dt``; the
    variant with exploding modulus ``x e^{i B + t/2}`` is :func:`rotation_noise_growing`.
    """
    return SdeSystem(2, 1, drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                     diffusion=lambda x: (np.asarray(x, dtype=float) @ _J.T)[..., None],
                     convention=Convention.STRATONOVICH, name="rotation_noise")


def rotation_noise_growing() -> SdeSystem:
    """Stratonovich ``dx = J x o dB + x/2 dt`` with solution ``x_0 e^{i B_t + t/2}``."""
    return SdeSystem(2, 1, drift=lambda x: 0.5 * np.asarray(x, dtype=float),
                     diffusion=lambda x: (np.asarray(x, dtype=float) @ _J.T)[..., None],
                     convention=Convention.STRATONOVICH, name="rotation_noise_growing")


def quadratic_blowup(sigma: float = 0.0) -> SdeSystem:
    """1-D ``dx = x^2 dt + sigma dB``; explodes in finite time from ``x0 > 0``."""
    return SdeSystem(1, 1, drift=lambda x: np.asarray(x, dtype=float) ** 2,
                     diffusion=lambda x: np.full(np.shape(x) + (1,), float(sigma)),
                     name=f"quadratic_blowup(sigma={sigma})")


def cubic_inward(sigma: float = 0.1) -> SdeSystem:
    """1-D ``dx = -x^3 dt + sigma dB``: comes down from infinity quickly."""
    return SdeSystem(1, 1, drift=lambda x: -np.asarray(x, dtype=float) ** 3,
                     diffusion=lambda x: np.full(np.shape(x) + (1,), float(sigma)),
                     name=f"cubic_inward(sigma={sigma})")


def constant_elliptic(a, b) -> SdeSystem:
    """Itô system for ``L = sum a_ij d_ij + b(x) . grad`` with constant ``a`` and ``b(x) = B x + b0``.

    ``b`` is either a vector (constant drift) or a pair ``(B, b0)``.  The
    diffusion is ``sqrt(2a)`` so the generator equals ``L`` exactly.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if isinstance(b, tuple):
        Bm, b0 = np.asarray(b[0], dtype=float), np.asarray(b[1], dtype=float)
    else:
        Bm, b0 = np.zeros((n, n)), np.asarray(b, dtype=float)
    op = EllipticOperator(n, a=lambda x: np.broadcast_to(2 * a, np.shape(x)[:-1] + (n, n)),
                          b=lambda x: np.asarray(x, dtype=float) @ Bm.T + b0)
    return elliptic_to_sde(op)


PRESETS = {
    "bm1d": lambda: bm(1),
    "bm": bm,
    "zero": zero,
    "linear_growth": linear_growth,
    "sublinear": sublinear,
    "rotation_noise": rotation_noise,
    "rotation_noise_growing": rotation_noise_growing,
    "quadratic_blowup": quadratic_blowup,
    "cubic_inward": cubic_inward,
    "elliptic": constant_elliptic,
}


def make(name: str, *args, **kwargs) -> SdeSystem:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(*args, **kwargs)
