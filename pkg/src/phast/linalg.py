"""Low-rank damping and mass operators with definiteness by construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, ParamStore, Tensor
from .errors import ContractViolation, NumericFault
from .nn import MLP, Featurizer, init_uniform
from .rng import Stream

__all__ = [
    "ExplicitHeads",
    "ConstantHeads",
    "MLPHeads",
    "DampingField",
    "ConstantDiagLowRank",
    "KnownAnalytic",
    "FlopCounter",
    "woodbury_solve",
    "damping_apply",
    "damping_matrix",
    "mass_solve",
    "jacobi_eigh",
    "stiffness_proxy",
    "linearized_spectrum",
    "canonical_J",
]

DIRECTION_FLOOR = 1e-8


def _softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


# ---------------------------------------------------------------------------
# Damping
# ---------------------------------------------------------------------------


class ExplicitHeads:
    """Fixed strengths and unit directions, independent of q (for tests and oracles)."""

    transformed = False

    def __init__(self, betas, directions):
        self.betas = np.atleast_1d(np.asarray(betas, dtype=float))
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        self.directions = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
        self.rank = self.betas.size

    def __call__(self, q: Tensor):
        lead = q.shape[:-1]
        b = np.broadcast_to(self.betas, lead + self.betas.shape)
        k = np.broadcast_to(self.directions, lead + self.directions.shape)
        return Tensor(b), Tensor(k)


class ConstantHeads:
    """Learnable q-independent raw strengths and directions."""

    transformed = True

    def __init__(self, params: ParamStore, prefix: str, n: int, rank: int, rng: Stream, strength_init=-2.0):
        self.rank = rank
        self.s = params.add(f"{prefix}.strength", np.full(rank, float(strength_init)))
        self.k = params.add(f"{prefix}.direction", init_uniform(rng, n, (rank, n)))

    def __call__(self, q: Tensor):
        lead = q.shape[:-1]
        n = self.k.shape[-1]
        s = ad.broadcast_to(self.s, lead + (self.rank,))
        k = ad.broadcast_to(self.k, lead + (self.rank, n))
        return s, k


class MLPHeads:
    """Shared two-layer perceptron over features of q producing (raw strength, raw direction) pairs."""

    transformed = True

    def __init__(self, params: ParamStore, prefix: str, featurizer: Featurizer, n: int, rank: int,
                 hidden: int, rng: Stream, strength_offset=-2.0):
        self.rank, self.n = rank, n
        self.featurizer = featurizer
        self.offset = float(strength_offset)
        self.net = MLP(params, prefix, [featurizer.width, hidden, rank * (1 + n)], rng)

    def __call__(self, q: Tensor):
        out = self.net(self.featurizer(q))
        r, n = self.rank, self.n
        s = out[..., :r] + self.offset
        k = ad.reshape(out[..., r:], q.shape[:-1] + (r, n))
        return s, k


class DampingField:
    """D(q) = d0 I + sum_i beta_i(q) k_i(q) k_i(q)^T.

    ``d0`` is either a fixed float or a raw parameter tensor passed through
    softplus. Uncapped strengths are softplus of the raw head output; with a
    cap the strengths are (cap / r) * sigmoid(raw), so their sum never
    exceeds the cap.
    """

    def __init__(self, n: int, d0=0.0, heads=None, cap: float | None = None, d0_raw: Tensor | None = None):
        self.n = int(n)
        self._d0 = float(d0)
        self.d0_raw = d0_raw
        self.heads = heads
        self.cap = None if cap is None else float(cap)
        if self.cap is not None and self.cap < 0:
            raise ContractViolation("damping cap must be nonnegative")
        if d0_raw is None and self._d0 < 0:
            raise ContractViolation("d0 must be nonnegative")

    @property
    def rank(self) -> int:
        return 0 if self.heads is None else self.heads.rank

    @property
    def d0_policy(self) -> str:
        return "fixed" if self.d0_raw is None else "learned"

    @classmethod
    def learned_d0(cls, params: ParamStore, name: str, n: int, init=0.1, heads=None, cap=None, trainable=True):
        raw = params.add(name, np.array(_softplus_inv(init)), trainable=trainable, decay=False)
        return cls(n, heads=heads, cap=cap, d0_raw=raw)

    def d0(self) -> Tensor:
        if self.d0_raw is not None:
            return ad.softplus(self.d0_raw)
        return Tensor(self._d0)

    def terms(self, q):
        """Strengths (..., r) and unit directions (..., r, n) at q."""
        q = ad.as_tensor(q)
        s, k = self.heads(q)
        if not np.all(np.isfinite(s.value)) or not np.all(np.isfinite(k.value)):
            raise NumericFault("non-finite damping head output", where=q.value)
        if not getattr(self.heads, "transformed", True):
            return s, k
        if self.cap is None:
            beta = ad.softplus(s)
        else:
            beta = ad.sigmoid(s) * (self.cap / self.rank)
        norm = ad.sqrt(ad.tsum(ad.square(k), axis=-1, keepdims=True))
        small = norm.value < DIRECTION_FLOOR
        if np.any(small):
            e1 = np.zeros(k.shape)
            e1[..., 0] = 1.0
            mask = np.broadcast_to(small, k.shape)
            k = ad.where(mask, Tensor(e1), k)
            norm = ad.where(small, Tensor(np.ones(norm.shape)), norm)
        return beta, k / norm

    def apply(self, q, v):
        q, v = ad.as_tensor(q), ad.as_tensor(v)
        if v.shape[-1] != self.n or q.shape[-1] != self.n:
            raise ContractViolation(f"damping expects dimension {self.n}, got q {q.shape}, v {v.shape}")
        out = v * self.d0()
        if self.rank == 0:
            return out
        beta, k = self.terms(q)
        kv = ad.tsum(k * ad.expand_dims(v, -2), axis=-1)
        return out + ad.tsum(ad.expand_dims(beta * kv, -1) * k, axis=-2)

    def matrix(self, q) -> Tensor:
        q = ad.as_tensor(q)
        if q.shape[-1] != self.n:
            raise ContractViolation(f"damping expects dimension {self.n}, got {q.shape}")
        eye = np.broadcast_to(np.eye(self.n), q.shape[:-1] + (self.n, self.n))
        out = self.d0() * Tensor(eye)
        if self.rank == 0:
            return out
        beta, k = self.terms(q)
        outer = ad.expand_dims(k, -1) * ad.expand_dims(k, -2)
        return out + ad.tsum(ad.expand_dims(ad.expand_dims(beta, -1), -1) * outer, axis=-3)

    def diagonal(self, q) -> Tensor:
        q = ad.as_tensor(q)
        out = self.d0() * Tensor(np.ones(q.shape))
        if self.rank == 0:
            return out
        beta, k = self.terms(q)
        return out + ad.tsum(ad.expand_dims(beta, -1) * ad.square(k), axis=-2)


def damping_apply(field: DampingField, q, v) -> Tensor:
    return field.apply(q, v)


def damping_matrix(field: DampingField, q) -> Tensor:
    return field.matrix(q)


# ---------------------------------------------------------------------------
# Mass
# ---------------------------------------------------------------------------


class FlopCounter:
    """Accumulates multiply-add counts of the Woodbury solve by operation shape."""

    def __init__(self):
        self.flops = 0

    def add(self, n: int):
        self.flops += int(n)


def woodbury_solve(d: np.ndarray, U: np.ndarray | None, p: np.ndarray, counter: FlopCounter | None = None):
    """Solve (diag(d) + U U^T) v = p for a single vector p, step by step."""
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    n = d.size
    c = counter or FlopCounter()
    z = p / d
    c.add(n)
    if U is None or U.shape[1] == 0:
        return z
    r = U.shape[1]
    Z = U / d[:, None]
    c.add(n * r)
    A = np.eye(r) + U.T @ Z
    c.add(n * r * r)
    rhs = U.T @ z
    c.add(n * r)
    try:
        coef = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericFault("singular Woodbury core") from exc
    c.add(r**3)
    v = z - Z @ coef
    c.add(n * r)
    return v


class ConstantDiagLowRank:
    """M = diag(d) + U U^T with d > 0."""

    is_constant = True

    def __init__(self, d, U=None, *, d_fn=None, U_fn=None):
        self._d = None if d is None else ad.as_tensor(d)
        self._U = None if U is None else ad.as_tensor(U)
        self._d_fn, self._U_fn = d_fn, U_fn
        if self._d is not None and np.any(self._d.value <= 0):
            raise ContractViolation("mass diagonal must be positive")

    @classmethod
    def learned(cls, params: ParamStore, prefix: str, n: int, rank: int, rng: Stream, diag_init=1.0,
                alpha_init=0.05, trainable=True):
        d_raw = params.add(f"{prefix}.diag", np.full(n, _softplus_inv(diag_init)), trainable=trainable, decay=False)
        if rank == 0:
            return cls(None, None, d_fn=lambda: ad.softplus(d_raw), U_fn=lambda: None)
        a_raw = params.add(f"{prefix}.alpha", np.full(rank, _softplus_inv(alpha_init)), trainable=trainable,
                           decay=False)
        k_raw = params.add(f"{prefix}.direction", init_uniform(rng, n, (rank, n)), trainable=trainable)

        def U_fn():
            norm = ad.sqrt(ad.tsum(ad.square(k_raw), axis=-1, keepdims=True) + DIRECTION_FLOOR**2)
            k = k_raw / norm
            return ad.transpose(k * ad.expand_dims(ad.sqrt(ad.softplus(a_raw)), -1))

        return cls(None, None, d_fn=lambda: ad.softplus(d_raw), U_fn=U_fn)

    def factors(self):
        d = self._d if self._d_fn is None else self._d_fn()
        U = self._U if self._U_fn is None else self._U_fn()
        return d, U

    @property
    def n(self) -> int:
        return self.factors()[0].shape[0]

    def matrix(self, q=None) -> Tensor:
        d, U = self.factors()
        n = d.shape[0]
        M = Tensor(np.eye(n)) * d
        if U is not None and U.shape[-1] > 0:
            M = M + ad.matmul(U, ad.transpose(U))
        if q is not None:
            q = q.value if isinstance(q, Dual) else ad.as_tensor(q)
            M = ad.broadcast_to(M, q.shape[:-1] + (n, n))
        return M

    def solve(self, q, p) -> Tensor:
        """Woodbury solve following z, Z, A, c, v; p has shape (..., n)."""
        p = ad.as_tensor(p)
        d, U = self.factors()
        z = p / d
        if U is None or U.shape[-1] == 0:
            return z
        r = U.shape[-1]
        Z = U / ad.expand_dims(d, -1)
        A = Tensor(np.eye(r)) + ad.matmul(ad.transpose(U), Z)
        lead = p.shape[:-1]
        zf = ad.reshape(z, (-1, z.shape[-1]))
        rhs = ad.matmul(zf, U)
        c = ad.transpose(ad.solve(A, ad.transpose(rhs)))
        v = zf - ad.matmul(c, ad.transpose(Z))
        return ad.reshape(v, lead + (d.shape[0],))

    def apply(self, q, v) -> Tensor:
        v = ad.as_tensor(v)
        d, U = self.factors()
        out = v * d
        if U is None or U.shape[-1] == 0:
            return out
        lead = v.shape[:-1]
        vf = ad.reshape(v, (-1, v.shape[-1]))
        lr = ad.matmul(ad.matmul(vf, U), ad.transpose(U))
        return out + ad.reshape(lr, lead + (d.shape[0],))

    def lambda_min(self, q=None) -> float:
        return float(jacobi_eigh(self.matrix().value)[0][0])


class KnownAnalytic:
    """Configuration-dependent mass from a closure q -> M(q) of shape (..., n, n).

    The closure must accept both tensors and duals so that the kinetic term
    can be differentiated in q.
    """

    is_constant = False

    def __init__(self, fn, n: int, name: str = "analytic"):
        self.fn, self._n, self.name = fn, int(n), name

    @property
    def n(self) -> int:
        return self._n

    def matrix(self, q):
        return self.fn(q)

    def solve(self, q, p) -> Tensor:
        p = ad.as_tensor(p)
        M = self.fn(ad.as_tensor(q))
        return ad.solve(M, ad.expand_dims(p, -1))[..., 0]

    def apply(self, q, v) -> Tensor:
        v = ad.as_tensor(v)
        M = self.fn(ad.as_tensor(q))
        return ad.matmul(M, ad.expand_dims(v, -1))[..., 0]

    def lambda_min(self, q) -> float:
        M = self.fn(Tensor(np.atleast_2d(np.asarray(q, dtype=float)))).value
        return float(min(jacobi_eigh(m)[0][0] for m in M))


def mass_solve(model, q, p) -> Tensor:
    p = ad.as_tensor(p)
    if p.shape[-1] != model.n:
        raise ContractViolation(f"mass expects dimension {model.n}, got {p.shape}")
    return model.solve(q, p)


# ---------------------------------------------------------------------------
# Spectral diagnostics
# ---------------------------------------------------------------------------


def jacobi_eigh(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns ascending eigenvalues and the matching eigenvector columns.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ContractViolation("jacobi_eigh expects a square matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
                V = V @ rot
    else:
        raise NumericFault("Jacobi eigensolver did not converge")
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def stiffness_proxy(field: DampingField, model, q, dt: float):
    """s = (dt/2) lambda_max(D(q)) / lambda_min(M(q)); s <= 2 suffices for the damping half-step."""
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    qs = np.atleast_2d(q)
    with ad.no_grad():
        D = field.matrix(Tensor(qs)).value
    out = np.empty(len(qs))
    for i, (qi, Di) in enumerate(zip(qs, D)):
        lam_d = jacobi_eigh(Di)[0][-1]
        lam_m = model.lambda_min(qi) if not model.is_constant else model.lambda_min()
        out[i] = 0.5 * dt * max(lam_d, 0.0) / lam_m
    return float(out[0]) if single else out


def canonical_J(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def linearized_spectrum(J, R, Q, tol: float = 1e-10) -> np.ndarray:
    """Eigenvalues of (J - R) Q after checking skewness, R >= 0 and Q > 0."""
    J, R, Q = (np.asarray(x, dtype=float) for x in (J, R, Q))
    scale = max(1.0, np.abs(J).max(), np.abs(R).max(), np.abs(Q).max())
    if np.abs(J + J.T).max() > tol * scale:
        raise ContractViolation("J must be skew-symmetric")
    if np.abs(R - R.T).max() > tol * scale or np.linalg.eigvalsh(R).min() < -tol * scale:
        raise ContractViolation("R must be symmetric positive semidefinite")
    if np.abs(Q - Q.T).max() > tol * scale or np.linalg.eigvalsh(Q).min() <= 0:
        raise ContractViolation("Q must be symmetric positive definite")
    try:
        return np.linalg.eigvals((J - R) @ Q)
    except np.linalg.LinAlgError as exc:
        raise NumericFault("eigensolver did not converge") from exc
