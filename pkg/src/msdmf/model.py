"""Parameter containers, validation, identification, and stationarity checks.

The model generates ``p x q`` observations ``Y_t = R_k F_t C_k^T + E_t``
where the regime ``k = s_t`` follows a hidden Markov chain and the
``k1 x k2`` factor matrix follows ``F_t = B_k + Phi_k F_{t-1} Gamma_k^T + eps_t``.

Regimes are 0-based throughout the library; file formats use 1-based labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import kron, symmetrize

__all__ = [
    "Dims",
    "RegimeParams",
    "ModelParams",
    "AppliedRotations",
    "validate",
    "stationary_dist",
    "spectral_radius_switching",
    "normalize_identification",
    "params_to_dict",
    "params_from_dict",
]

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Dims:
    """Problem dimensions: observation p x q, factors k1 x k2, M regimes, n steps."""

    p: int
    q: int
    k1: int
    k2: int
    M: int
    n: int

    @property
    def r(self) -> int:
        return self.k1 * self.k2


@dataclass(frozen=True)
class RegimeParams:
    """Per-regime parameter block (R, C, B, Phi, Gamma)."""

    R: np.ndarray      # p x k1 row loadings
    C: np.ndarray      # q x k2 column loadings
    B: np.ndarray      # k1 x k2 intercept
    Phi: np.ndarray    # k1 x k1 row AR coefficients
    Gamma: np.ndarray  # k2 x k2 column AR coefficients


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: M regime blocks, noise variances, transition matrix."""

    dims: Dims
    regimes: tuple[RegimeParams, ...]
    sigma2: float
    sigma_eps2: float
    P: np.ndarray  # M x M row-stochastic transition matrix

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))


@dataclass(frozen=True)
class AppliedRotations:
    """Record of the transformations applied by :func:`normalize_identification`."""

    H_r: np.ndarray                 # global k1 x k1 orthogonal rotation
    H_c: np.ndarray                 # global k2 x k2 orthogonal rotation
    signs_r: np.ndarray             # M x k1 per-regime column sign flips of R
    signs_c: np.ndarray             # M x k2 per-regime column sign flips of C
    perm: tuple[int, ...]           # regime reordering: output k = input perm[k]


def validate(params: ModelParams) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    v: list[str] = []
    d = params.dims
    if not (1 <= d.k1 <= d.p):
        v.append(f"dims: require 1 <= k1 <= p, got k1={d.k1}, p={d.p}")
    if not (1 <= d.k2 <= d.q):
        v.append(f"dims: require 1 <= k2 <= q, got k2={d.k2}, q={d.q}")
    if d.M < 1:
        v.append(f"dims: require M >= 1, got M={d.M}")
    if d.n < 2:
        v.append(f"dims: require n >= 2, got n={d.n}")
    if len(params.regimes) != d.M:
        v.append(f"expected {d.M} regime blocks, got {len(params.regimes)}")
    shapes = {"R": (d.p, d.k1), "C": (d.q, d.k2), "B": (d.k1, d.k2),
              "Phi": (d.k1, d.k1), "Gamma": (d.k2, d.k2)}
    for k, reg in enumerate(params.regimes):
        for name, want in shapes.items():
            A = np.asarray(getattr(reg, name))
            if A.shape != want:
                v.append(f"regime {k}: {name} has shape {A.shape}, expected {want}")
            elif not np.all(np.isfinite(A)):
                v.append(f"regime {k}: {name} contains non-finite entries")
    if not (np.isfinite(params.sigma2) and params.sigma2 > 0):
        v.append(f"sigma2 must be strictly positive, got {params.sigma2}")
    if not (np.isfinite(params.sigma_eps2) and params.sigma_eps2 > 0):
        v.append(f"sigma_eps2 must be strictly positive, got {params.sigma_eps2}")
    P = np.asarray(params.P, dtype=float)
    if P.shape != (d.M, d.M):
        v.append(f"P has shape {P.shape}, expected ({d.M}, {d.M})")
    else:
        if not np.all(np.isfinite(P)):
            v.append("P contains non-finite entries")
        else:
            if np.any(P < 0) or np.any(P > 1):
                v.append("P entries must lie in [0, 1]")
            rows = P.sum(axis=1)
            for i, s in enumerate(rows):
                if abs(s - 1.0) > ROW_SUM_TOL:
                    v.append(f"P row {i} sums to {s!r}, expected 1 +- {ROW_SUM_TOL}")
    return v


def stationary_dist(P: np.ndarray) -> np.ndarray:
    """Stationary distribution pi with ``pi^T P = pi^T``.

    Raises ``ValueError`` when the eigenvalue-1 eigenspace of ``P^T`` has
    multiplicity > 1 (reducible chain), in which case no unique stationary
    distribution exists.
    """
    P = np.asarray(P, dtype=float)
    M = P.shape[0]
    if P.shape != (M, M):
        raise ValueError("P must be square")
    if M == 1:
        return np.ones(1)
    eigvals = np.linalg.eigvals(P.T)
    n_unit = int(np.sum(np.abs(eigvals - 1.0) < 1e-9))
    if n_unit != 1:
        raise ValueError(
            f"transition matrix has eigenvalue-1 multiplicity {n_unit}; "
            "chain is reducible, stationary distribution not unique"
        )
    # solve the balance equations with the normalization appended
    A = np.vstack([P.T - np.eye(M), np.ones((1, M))])
    b = np.zeros(M + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _psi_blocks(params: ModelParams) -> list[np.ndarray]:
    return [kron(reg.Gamma, reg.Phi) for reg in params.regimes]


def spectral_radius_switching(params: ModelParams, dense_limit: int = 4096,
                              tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Spectral radius of the regime-switching state recursion.

    The quantity is ``rho(Q)`` with
    ``Q = diag(Psi_1 (x) Psi_1, ..., Psi_M (x) Psi_M) (P^T (x) I_{r^2})``
    and ``Psi_k = Gamma_k (x) Phi_k``; a value below one certifies a unique
    stationary ergodic factor process.  Built densely while ``M r^2`` stays
    below ``dense_limit``, otherwise estimated by power iteration.
    """
    d = params.dims
    r2 = d.r * d.r
    psis = _psi_blocks(params)
    P = np.asarray(params.P, dtype=float)
    if d.M * r2 <= dense_limit:
        Q = np.zeros((d.M * r2, d.M * r2))
        for k in range(d.M):
            PsiPsi = kron(psis[k], psis[k])
            for i in range(d.M):
                Q[k * r2:(k + 1) * r2, i * r2:(i + 1) * r2] = P[i, k] * PsiPsi
        return float(np.max(np.abs(np.linalg.eigvals(Q))))

    # the iteration map sends stacked PSD matrices to stacked PSD matrices,
    # so the spectral radius is attained on that cone; starting from stacked
    # identities keeps the iterates inside it and the norm ratio convergent
    v = np.tile(np.eye(d.r).reshape(-1, order="F"), d.M)
    v /= np.linalg.norm(v)
    lam_prev = np.inf
    for _ in range(max_iter):
        blocks = v.reshape(d.M, r2)
        mixed = P.T @ blocks                       # block k of (P^T (x) I) v
        out = np.empty_like(blocks)
        for k in range(d.M):
            W = mixed[k].reshape(d.r, d.r, order="F")
            out[k] = (psis[k] @ W @ psis[k].T).reshape(-1, order="F")
        w = out.reshape(-1)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
        if abs(lam - lam_prev) <= tol * max(lam, 1e-300):
            return lam
        lam_prev = lam
    raise RuntimeError(
        f"power iteration did not converge in {max_iter} steps; last iterate {lam_prev!r}"
    )


def _rotate_global(params: ModelParams, H_r: np.ndarray, H_c: np.ndarray) -> list[RegimeParams]:
    """Apply one orthogonal rotation pair to every regime block."""
    out = []
    for reg in params.regimes:
        out.append(RegimeParams(
            R=reg.R @ H_r,
            C=reg.C @ H_c,
            B=H_r.T @ reg.B @ H_c,
            Phi=H_r.T @ reg.Phi @ H_r,
            Gamma=H_c.T @ reg.Gamma @ H_c,
        ))
    return out


def normalize_identification(params: ModelParams, anchor: int = 0
                             ) -> tuple[ModelParams, AppliedRotations]:
    """Rotate, sign-flip, and reorder parameters into the identified form.

    The anchor regime's ``R^T R / p`` and ``C^T C / q`` are diagonalized with
    descending diagonal via orthogonal eigenrotations applied to every regime;
    column signs are then flipped per regime so the first rows of ``R_k`` and
    ``C_k`` are non-negative, and regimes are reordered so the ``(1,1)``
    intercept entries are strictly descending (transition matrix permuted
    consistently).  Every regime's common component ``R_k F C_k^T`` is
    preserved when ``F`` is counter-transformed by that regime's rotation.
    """
    d = params.dims
    if not (0 <= anchor < d.M):
        raise ValueError(f"anchor regime {anchor} out of range for M={d.M}")
    Ra = np.asarray(params.regimes[anchor].R, dtype=float)
    Ca = np.asarray(params.regimes[anchor].C, dtype=float)
    if np.linalg.matrix_rank(Ra) < d.k1 or np.linalg.matrix_rank(Ca) < d.k2:
        raise ValueError(f"anchor regime {anchor} has rank-deficient loadings")

    w_r, H_r = np.linalg.eigh(symmetrize(Ra.T @ Ra) / d.p)
    w_c, H_c = np.linalg.eigh(symmetrize(Ca.T @ Ca) / d.q)
    H_r = H_r[:, ::-1]  # descending eigenvalue order
    H_c = H_c[:, ::-1]
    regimes = _rotate_global(params, H_r, H_c)

    signs_r = np.ones((d.M, d.k1))
    signs_c = np.ones((d.M, d.k2))
    flipped = []
    for k, reg in enumerate(regimes):
        s_r = np.where(reg.R[0] < 0, -1.0, 1.0)
        s_c = np.where(reg.C[0] < 0, -1.0, 1.0)
        signs_r[k] = s_r
        signs_c[k] = s_c
        Sr = np.diag(s_r)
        Sc = np.diag(s_c)
        flipped.append(RegimeParams(
            R=reg.R * s_r,
            C=reg.C * s_c,
            B=Sr @ reg.B @ Sc,
            Phi=Sr @ reg.Phi @ Sr,
            Gamma=Sc @ reg.Gamma @ Sc,
        ))

    b11 = np.array([reg.B[0, 0] for reg in flipped])
    order = np.argsort(-b11, kind="stable")
    sorted_b11 = b11[order]
    for a, b in zip(sorted_b11[:-1], sorted_b11[1:]):
        if abs(a - b) <= 1e-12:
            raise ValueError(
                f"regime intercepts B(1,1) tied at {a!r}; ordering constraint "
                "requires strictly descending values"
            )
    perm = tuple(int(i) for i in order)
    P_new = np.asarray(params.P)[np.ix_(order, order)]
    new = ModelParams(
        dims=d,
        regimes=tuple(flipped[i] for i in perm),
        sigma2=params.sigma2,
        sigma_eps2=params.sigma_eps2,
        P=P_new,
    )
    rot = AppliedRotations(H_r=H_r, H_c=H_c,
                           signs_r=signs_r[order], signs_c=signs_c[order],
                           perm=perm)
    return new, rot


def params_to_dict(params: ModelParams) -> dict:
    """JSON-ready dict with a dims block and row-major matrix arrays."""
    d = params.dims
    return {
        "dims": {"p": d.p, "q": d.q, "k1": d.k1, "k2": d.k2, "M": d.M, "n": d.n},
        "regimes": [
            {
                "R": np.asarray(reg.R).tolist(),
                "C": np.asarray(reg.C).tolist(),
                "B": np.asarray(reg.B).tolist(),
                "Phi": np.asarray(reg.Phi).tolist(),
                "Gamma": np.asarray(reg.Gamma).tolist(),
            }
            for reg in params.regimes
        ],
        "sigma2": float(params.sigma2),
        "sigma_eps2": float(params.sigma_eps2),
        "P": np.asarray(params.P).tolist(),
    }


def params_from_dict(doc: dict) -> ModelParams:
    """Inverse of :func:`params_to_dict`; validates the result."""
    try:
        dd = doc["dims"]
        dims = Dims(p=int(dd["p"]), q=int(dd["q"]), k1=int(dd["k1"]),
                    k2=int(dd["k2"]), M=int(dd["M"]), n=int(dd.get("n", 2)))
        regimes = tuple(
            RegimeParams(
                R=np.asarray(reg["R"], dtype=float),
                C=np.asarray(reg["C"], dtype=float),
                B=np.asarray(reg["B"], dtype=float),
                Phi=np.asarray(reg["Phi"], dtype=float),
                Gamma=np.asarray(reg["Gamma"], dtype=float),
            )
            for reg in doc["regimes"]
        )
        params = ModelParams(dims=dims, regimes=regimes,
                             sigma2=float(doc["sigma2"]),
                             sigma_eps2=float(doc["sigma_eps2"]),
                             P=np.asarray(doc["P"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed parameter document: {exc}") from exc
    problems = validate(params)
    if problems:
        raise ValueError("invalid parameters: " + "; ".join(problems))
    return params
