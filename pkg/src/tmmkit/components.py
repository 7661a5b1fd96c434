"""Per-patch mixture component families: diagonal Gaussian and categorical.

Both families factor over the coordinates of a local structure, so
coordinate-wise marginalization is exact: the log-density of a partially
observed patch is the sum over observed coordinates only, and a fully missing
patch contributes log 1 = 0.

Component parameters are global, shared across all patch positions. Gaussian
variances are kept proper during SGD by the reparameterization
``sigma2 = SIGMA2_MIN + softplus(rho)``; categorical tables are log-space
offsets renormalized to the simplex after every optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .logspace import logsumexp, sigmoid, softplus, softplus_inv

GAUSSIAN = "diagonal_gaussian"
CATEGORICAL = "categorical"

SIGMA2_MIN = 1e-4

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ComponentFamily:
    """M mixture components over s-dimensional local structures.

    Gaussian: ``means``/``rho`` have shape (M, s); variances are derived.
    Categorical: ``log_tables`` has shape (M, s, V), each (d, c) row a
    normalized log-probability table over the alphabet.
    """

    kind: str
    means: np.ndarray | None = None       # (M, s)
    rho: np.ndarray | None = None         # (M, s)
    log_tables: np.ndarray | None = None  # (M, s, V)

    def __post_init__(self):
        if self.kind == GAUSSIAN:
            self.means = np.asarray(self.means, dtype=np.float64)
            self.rho = np.asarray(self.rho, dtype=np.float64)
            if self.means.shape != self.rho.shape or self.means.ndim != 2:
                raise ValueError("gaussian family needs matching (M, s) means and rho")
        elif self.kind == CATEGORICAL:
            self.log_tables = np.asarray(self.log_tables, dtype=np.float64)
            if self.log_tables.ndim != 3:
                raise ValueError("categorical family needs (M, s, V) log tables")
        else:
            raise ValueError(f"unknown component kind {self.kind!r}")

    @property
    def n_components(self) -> int:
        return self.means.shape[0] if self.kind == GAUSSIAN else self.log_tables.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.means.shape[1] if self.kind == GAUSSIAN else self.log_tables.shape[1]

    @property
    def alphabet(self) -> int:
        if self.kind != CATEGORICAL:
            raise ValueError("alphabet defined only for categorical families")
        return self.log_tables.shape[2]

    @property
    def sigma2(self) -> np.ndarray:
        return SIGMA2_MIN + softplus(self.rho)

    def validate(self, atol: float = 1e-9):
        if self.kind == GAUSSIAN:
            if np.any(self.sigma2 < SIGMA2_MIN):
                raise ValueError("gaussian variance below floor")
        else:
            norms = logsumexp(self.log_tables, axis=2)
            if np.max(np.abs(norms)) > atol:
                raise ValueError("categorical table not on the simplex")

    def copy(self) -> "ComponentFamily":
        if self.kind == GAUSSIAN:
            return ComponentFamily(GAUSSIAN, means=self.means.copy(), rho=self.rho.copy())
        return ComponentFamily(CATEGORICAL, log_tables=self.log_tables.copy())


def gaussian_family(means, sigma2) -> ComponentFamily:
    """Build a Gaussian family from target variances (floored at SIGMA2_MIN)."""
    means = np.asarray(means, dtype=np.float64)
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), means.shape)
    excess = np.maximum(sigma2 - SIGMA2_MIN, 1e-12)
    return ComponentFamily(GAUSSIAN, means=means, rho=softplus_inv(excess))


def categorical_family(tables) -> ComponentFamily:
    """Build a categorical family from probability tables of shape (M, s, V)."""
    tables = np.asarray(tables, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logs = np.log(tables)
    fam = ComponentFamily(CATEGORICAL, log_tables=logs)
    fam.validate(atol=1e-9)
    return fam


def random_family(kind, n_components, patch_dim, rng, alphabet=3,
                  mean_scale=1.0, sigma2_range=(0.5, 2.0)) -> ComponentFamily:
    if kind == GAUSSIAN:
        means = rng.normal(0.0, mean_scale, size=(n_components, patch_dim))
        sigma2 = rng.uniform(*sigma2_range, size=(n_components, patch_dim))
        return gaussian_family(means, sigma2)
    raw = rng.normal(size=(n_components, patch_dim, alphabet))
    logs = raw - logsumexp(raw, axis=2, keepdims=True)
    return ComponentFamily(CATEGORICAL, log_tables=logs)


def log_density_matrix(fam: ComponentFamily, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-patch, per-component log-densities over observed coordinates.

    values: (..., s) floats (Gaussian) or integer symbols (categorical);
    mask:   (..., s) booleans, True = observed. Returns (..., M); a fully
    missing patch row is exactly zero.
    """
    mask = np.asarray(mask, dtype=bool)
    if fam.kind == GAUSSIAN:
        x = np.asarray(values, dtype=np.float64)[..., None, :]       # (..., 1, s)
        mu = fam.means                                               # (M, s)
        s2 = fam.sigma2
        z = np.where(mask[..., None, :], x - mu, 0.0)
        ll = -0.5 * (z * z / s2 + np.log(2.0 * np.pi * s2))
        return np.sum(np.where(mask[..., None, :], ll, 0.0), axis=-1)
    sym = np.asarray(values)
    safe = np.where(mask, sym, 0).astype(np.int64)
    if np.any(safe < 0) or np.any(safe >= fam.alphabet):
        raise ValueError("categorical symbol out of range")
    d_idx = np.arange(fam.n_components)[:, None]   # (M, 1)
    c_idx = np.arange(fam.patch_dim)[None, :]      # (1, s)
    gathered = fam.log_tables[d_idx, c_idx, safe[..., None, :]]   # (..., M, s)
    return np.sum(np.where(mask[..., None, :], gathered, 0.0), axis=-1)


def log_density(fam: ComponentFamily, d: int, x, coord_mask) -> float:
    """Log-density of one component on one patch, observed coordinates only."""
    if not 0 <= d < fam.n_components:
        raise IndexError(f"component index {d} out of range [0, {fam.n_components})")
    row = log_density_matrix(fam, np.asarray(x)[None, :], np.asarray(coord_mask, dtype=bool)[None, :])
    return float(row[0, d])


def sample_component(fam: ComponentFamily, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one local structure from component d, coordinate-wise."""
    if not 0 <= d < fam.n_components:
        raise IndexError(f"component index {d} out of range [0, {fam.n_components})")
    if fam.kind == GAUSSIAN:
        return fam.means[d] + np.sqrt(fam.sigma2[d]) * rng.standard_normal(fam.patch_dim)
    probs = np.exp(fam.log_tables[d])
    out = np.empty(fam.patch_dim, dtype=np.int64)
    for c in range(fam.patch_dim):
        out[c] = rng.choice(fam.alphabet, p=probs[c] / probs[c].sum())
    return out


def component_mode(fam: ComponentFamily, d: int) -> np.ndarray:
    """Most likely local structure under component d."""
    if fam.kind == GAUSSIAN:
        return fam.means[d].copy()
    return np.argmax(fam.log_tables[d], axis=1)


def density_param_grads(fam: ComponentFamily, values, mask, grad_rep):
    """Accumulate d(loss)/d(family params) from d(loss)/d(rep).

    values/mask: (..., s); grad_rep: (..., M). Returns a dict keyed like the
    family's parameter arrays.
    """
    mask = np.asarray(mask, dtype=bool)
    if fam.kind == GAUSSIAN:
        x = np.asarray(values, dtype=np.float64)[..., None, :]
        mu = fam.means
        s2 = fam.sigma2
        z = np.where(mask[..., None, :], x - mu, 0.0)
        g = grad_rep[..., :, None]                                  # (..., M, 1)
        flat = tuple(range(g.ndim - 2))
        d_mean = np.sum(g * (z / s2), axis=flat)
        d_sigma2 = np.sum(g * 0.5 * (z * z / (s2 * s2) - np.where(mask[..., None, :], 1.0 / s2, 0.0)), axis=flat)
        return {"means": d_mean, "rho": d_sigma2 * sigmoid(fam.rho)}
    sym = np.asarray(values)
    safe = np.where(mask, sym, 0).astype(np.int64)
    d_tab = np.zeros_like(fam.log_tables)
    obs = np.nonzero(mask)
    if obs[0].size:
        c_obs = obs[-1]
        v_obs = safe[obs]
        g_obs = grad_rep[obs[:-1]]          # (n_obs, M)
        view = d_tab.transpose(1, 2, 0)     # (s, V, M), shares memory
        np.add.at(view, (c_obs, v_obs), g_obs)
    return {"log_tables": d_tab}
