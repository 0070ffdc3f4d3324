"""Penalized least-squares covariance fit via accelerated ADMM.

The coefficient tensor B has shape (q_1, ..., q_p, q_1, ..., q_p).  The data
term is a quadratic in vec(B_sq):

    loss(B) = vec(B_sq)^T G vec(B_sq) - h^T vec(B_sq) + c0,

where G, h, c0 aggregate the per-subject factor rows L_i (Khatri-Rao
products of the gram-factor rows) against the off-diagonal cross-products.
vec is documented as column-stacking; every matrix the solver vectorizes is
symmetric, so this coincides with the row-major ravel used by the code, and
the quadratic-form consistency test pins the convention.

The penalty couples the trace norm of the square unfolding (through a
positive-semidefinite indicator) with the trace norms of the one-way
unfoldings.  Each ADMM iteration solves a ridge system in B, applies one
eigenvalue and p singular-value soft-thresholds, updates scaled duals, and
extrapolates with a Nesterov momentum sequence (restarted whenever the
objective increases).

Every iterate's square unfolding is kept exactly symmetric by restricting
the B-subproblem to the symmetric subspace (the ridge system maps that
subspace to itself, so this is the subproblem's exact minimizer over
symmetric B).  The solve is carried out in packed symmetric coordinates of
dimension Q(Q+1)/2, an isometric change of basis that roughly halves the
linear-algebra cost.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from .data import cross_products, make_folds
from .tensor import matricize, one_way_fold, one_way_unfold, square_fold, square_unfold

__all__ = [
    "FitConfig",
    "FitState",
    "Precompute",
    "CovarianceFit",
    "precompute",
    "objective",
    "prox_trace_mode_k",
    "prox_psd",
    "admm_fit",
    "rank_report",
    "cv_select",
    "DEFAULT_LAMBDA_GRID",
    "DEFAULT_BETA_GRID",
]

# default cross-validation grids
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-5.0, 0.0, 7))
DEFAULT_BETA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)

# G is materialized densely while (prod q_k)^2 stays below this; beyond it
# the solver switches to matrix-free conjugate-gradient B-updates.
DENSE_LIMIT = 2500


@dataclass(frozen=True)
class FitConfig:
    """Tuning and algorithmic parameters of a single fit."""

    lam: float = 1e-3
    beta: float = 0.5
    eta: float = 1.0
    max_iters: int = 500
    tol: float = 1e-6
    rank_threshold: float = 1e-4
    adaptive_eta: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def to_dict(self):
        return {
            "lambda": self.lam,
            "beta": self.beta,
            "eta": self.eta,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "rank_threshold": self.rank_threshold,
            "adaptive_eta": self.adaptive_eta,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


class SymPacking:
    """Isometric packing of symmetric Q x Q matrices into R^{Q(Q+1)/2}."""

    def __init__(self, q):
        self.q = q
        iu = np.triu_indices(q)
        self.iu = iu
        self.off = iu[0] < iu[1]
        self.col_upper = iu[0] * q + iu[1]
        self.col_lower = iu[1] * q + iu[0]
        self.dim = iu[0].size

    def pack(self, m):
        """S^T vec(m): symmetrizes as it packs."""
        v = 0.5 * (m[self.iu] + m[self.iu[1], self.iu[0]])
        v[self.off] *= math.sqrt(2.0)
        return v

    def unpack(self, x):
        v = np.array(x, dtype=float)
        v[self.off] /= math.sqrt(2.0)
        m = np.empty((self.q, self.q))
        m[self.iu] = v
        m[self.iu[1], self.iu[0]] = v
        return m

    def pack_operator(self, g):
        """S^T G S for a dense (Q^2, Q^2) operator preserving symmetry."""
        gs = g[:, self.col_upper].copy()
        gs[:, self.off] += g[:, self.col_lower[self.off]]
        gs[:, self.off] /= math.sqrt(2.0)
        out = gs[self.col_upper, :].copy()
        out[self.off, :] += gs[self.col_lower[self.off], :]
        out[self.off, :] /= math.sqrt(2.0)
        return (out + out.T) / 2.0


@dataclass
class Precompute:
    """Per-subject factor rows and aggregated quadratic-loss pieces.

    ``G``/``h``/``c0`` describe the full-data loss.  When built with a fold
    assignment, raw per-fold sums are kept so training/validation loss
    pieces come from subtraction rather than a second pass.
    """

    grams: list
    dims: tuple
    L: list
    zt: list
    u: np.ndarray            # raw subject weights 1/(m_i (m_i - 1))
    c0_raw: np.ndarray       # per-subject sum of squared off-diagonal Z
    h_raw: list              # per-subject 2 L^T Z~ L (unweighted by u)
    dense: bool
    G: np.ndarray | None     # full-data (Q^2, Q^2), None in matrix-free mode
    h: np.ndarray            # full-data (Q^2,)
    c0: float
    pack: SymPacking
    G_sym: np.ndarray | None
    folds: object = None
    G_fold: list = field(default_factory=list)   # raw valid-fold sums of u_i G_i

    @property
    def q_total(self):
        return int(np.prod(self.dims))

    @property
    def n(self):
        return len(self.L)

    @property
    def p(self):
        return len(self.dims)

    def subset_pieces(self, subjects):
        """Normalized (h, c0) plus row data for a subject subset."""
        subjects = np.asarray(subjects)
        n_sub = subjects.size
        h = sum(self.u[i] * self.h_raw[i] for i in subjects) / n_sub
        c0 = float(self.u[subjects] @ self.c0_raw[subjects]) / n_sub
        return h, c0

    def loss_direct(self, b_sq, subjects=None):
        """Off-diagonal squared-error loss of the square unfolding ``b_sq``."""
        idx = range(self.n) if subjects is None else subjects
        idx = list(idx)
        total = 0.0
        for i in idx:
            li = self.L[i]
            resid = self.zt[i] - li @ b_sq @ li.T
            np.fill_diagonal(resid, 0.0)
            total += self.u[i] * float((resid * resid).sum())
        return total / len(idx)

    def apply_G(self, x_mat, subjects=None):
        """G vec, reshaped: sum_i w_i L_i^T offdiag(L_i X L_i^T) L_i."""
        idx = range(self.n) if subjects is None else subjects
        idx = list(idx)
        out = np.zeros_like(x_mat)
        for i in idx:
            li = self.L[i]
            y = li @ x_mat @ li.T
            np.fill_diagonal(y, 0.0)
            out += self.u[i] * (li.T @ y @ li)
        out /= len(idx)
        return out


def _subject_rows(grams, data):
    """Per-subject Khatri-Rao factor rows L_i; validates the row partition."""
    slices = data.subject_slices()
    n_pooled = int(data.counts.sum())
    for k, gf in enumerate(grams):
        if gf.factor.shape[0] != n_pooled:
            raise ValueError(
                f"gram factor {k} has {gf.factor.shape[0]} rows but the "
                f"dataset pools {n_pooled} observations"
            )
    if len(grams) != data.p:
        raise ValueError(f"need {data.p} gram factors, got {len(grams)}")
    out = []
    for sl in slices:
        li = grams[0].factor[sl]
        for gf in grams[1:]:
            block = gf.factor[sl]
            li = (li[:, :, None] * block[:, None, :]).reshape(li.shape[0], -1)
        out.append(np.ascontiguousarray(li))
    return out


def precompute(data, cross, grams, folds=None, dense=None):
    """Assemble L_i, G, h, c0 (and per-fold pieces) for the quadratic loss."""
    dims = tuple(gf.retained_rank for gf in grams)
    q = int(np.prod(dims))
    ell = _subject_rows(grams, data)
    counts = data.counts
    u = 1.0 / (counts * (counts - 1.0))
    zt = [cross.masked(i) for i in range(data.n)]
    c0_raw = np.array([(z * z).sum() for z in zt])
    h_raw = [2.0 * (li.T @ z @ li).ravel() for li, z in zip(ell, zt)]
    if dense is None:
        dense = q * q <= DENSE_LIMIT
    pk = SymPacking(q)

    g_full = None
    g_fold = []
    if dense:
        g_full = np.zeros((q * q, q * q))
        if folds is not None:
            g_fold = [np.zeros((q * q, q * q)) for _ in range(folds.n_folds)]
        for i, li in enumerate(ell):
            c = li.T @ li
            gi = np.kron(c, c)
            w = (li[:, :, None] * li[:, None, :]).reshape(li.shape[0], -1)
            gi -= w.T @ w
            gi *= u[i]
            g_full += gi
            if folds is not None:
                g_fold[folds.assignment[i]] += gi

    n = data.n
    h = sum(ui * hi for ui, hi in zip(u, h_raw)) / n
    c0 = float(u @ c0_raw) / n
    g_norm = g_full / n if dense else None
    g_sym = pk.pack_operator(g_norm) if dense else None
    return Precompute(
        grams=list(grams), dims=dims, L=ell, zt=zt, u=u, c0_raw=c0_raw,
        h_raw=h_raw, dense=dense, G=g_norm, h=h, c0=c0, pack=pk,
        G_sym=g_sym, folds=folds, G_fold=g_fold,
    )


# ---------------------------------------------------------------------------
# proximal operators

def prox_trace_mode_k(a, mode, v):
    """Soft-threshold the singular values of the mode-``mode`` unfolding."""
    a = np.asarray(a, dtype=float)
    if v < 0:
        raise ValueError("threshold must be nonnegative")
    if v == 0.0:
        return a.copy()
    m = one_way_unfold(a, mode)
    u_m, s, vt = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - v, 0.0)
    return one_way_fold((u_m * s) @ vt, mode, a.shape)


def _prox_psd_mat(m, v):
    """PSD projection with eigenvalue soft-threshold on a square matrix."""
    sym = (m + m.T) / 2.0
    w, p_mat = np.linalg.eigh(sym)
    c = np.maximum(w - v, 0.0)
    nz = c > 0.0
    if not nz.any():
        return np.zeros_like(sym), c
    pk = p_mat[:, nz]
    out = (pk * c[nz]) @ pk.T
    return (out + out.T) / 2.0, c


def prox_psd(a, v):
    """Symmetrize the square unfolding, keep (eigenvalue - v)_+ components."""
    a = np.asarray(a, dtype=float)
    if v < 0:
        raise ValueError("threshold must be nonnegative")
    out, _ = _prox_psd_mat(square_unfold(a), v)
    return square_fold(out, a.shape)


# ---------------------------------------------------------------------------
# objective

def _one_way_trace_norms(b_sq, dims):
    """Trace norms of the one-way unfoldings, via small Gram eigenvalues."""
    tensor = b_sq.reshape(dims + dims)
    norms = []
    for k in range(len(dims)):
        m = matricize(tensor, k)
        ev = np.linalg.eigvalsh(m @ m.T)
        norms.append(float(np.sqrt(np.maximum(ev, 0.0)).sum()))
    return norms


def objective(b, pre, config):
    """Full objective: data loss plus trace-norm penalties (+inf if infeasible)."""
    b = np.asarray(b, dtype=float)
    b_sq = square_unfold(b) if b.ndim > 2 else b
    value = pre.loss_direct(b_sq)
    if config.lam == 0.0:
        return value
    if config.beta > 0.0:
        scale = np.abs(b_sq).max()
        if scale > 0 and np.abs(b_sq - b_sq.T).max() > 1e-8 * scale:
            return float("inf")
        w = np.linalg.eigvalsh((b_sq + b_sq.T) / 2.0)
        lam_max = max(w.max(), 0.0)
        if w.min() < -1e-8 * max(lam_max, 1e-300):
            return float("inf")
        value += config.lam * config.beta * float(np.abs(w).sum())
    if config.beta < 1.0:
        p = pre.p
        norms = _one_way_trace_norms(b_sq, pre.dims)
        value += config.lam * (1.0 - config.beta) / p * sum(norms)
    return value


# ---------------------------------------------------------------------------
# the accelerated ADMM

@dataclass
class FitState:
    """ADMM iterate bundle: initialization for ``admm_fit`` (warm starts),
    and the final state carried on a ``CovarianceFit``."""

    B: np.ndarray
    D: list
    V: list
    alpha: float = 1.0


@dataclass
class CovarianceFit:
    """Result of a fit: final PSD-projected coefficients plus diagnostics."""

    coeffs: np.ndarray           # (q_1..q_p, q_1..q_p) tensor, PSD square unfolding
    config: FitConfig
    grams: list
    converged: bool
    n_iters: int
    objective_value: float
    primal_residuals: np.ndarray
    objective_trace: np.ndarray
    eta_final: float
    stationarity: np.ndarray | None = None
    max_skew: float = 0.0
    state: FitState | None = None

    @property
    def dims(self):
        return tuple(gf.retained_rank for gf in self.grams)

    def coeff_square(self):
        return square_unfold(self.coeffs)


class _System:
    """The ridge solve (2 G + (p+1) eta I)^{-1} in packed symmetric coordinates."""

    def __init__(self, pre, subjects, eta, g_sym=None, h=None, c0=None):
        self.pre = pre
        self.subjects = subjects
        self.pack = pre.pack
        self.p = pre.p
        if h is None:
            h, c0 = pre.subset_pieces(subjects) if subjects is not None else (pre.h, pre.c0)
        self.h, self.c0 = h, c0
        self.h_packed = self.pack.pack(h.reshape(pre.q_total, pre.q_total))
        self.g_sym = g_sym
        self.dense = g_sym is not None
        self.eta = None
        self._factor = None
        self.set_eta(eta)

    def set_eta(self, eta):
        if eta == self.eta:
            return
        self.eta = eta
        if self.dense:
            a = 2.0 * self.g_sym + (self.p + 1) * eta * np.eye(self.g_sym.shape[0])
            self._factor = cho_factor(a, lower=True, check_finite=False)

    def quad(self, x_packed):
        """Data loss at the packed symmetric coefficient vector."""
        if self.dense:
            gx = self.g_sym @ x_packed
        else:
            m = self.pack.unpack(x_packed)
            gx = self.pack.pack(self.pre.apply_G(m, self.subjects))
        return float(x_packed @ gx) - float(self.h_packed @ x_packed) + self.c0

    def solve(self, rhs_packed, x0=None):
        if self.dense:
            return cho_solve(self._factor, rhs_packed, check_finite=False)
        pre, subjects, eta, p = self.pre, self.subjects, self.eta, self.p

        def matvec(x):
            m = self.pack.unpack(x)
            out = 2.0 * pre.apply_G(m, subjects) + (p + 1) * eta * m
            return self.pack.pack(out)

        op = LinearOperator((self.pack.dim, self.pack.dim), matvec=matvec,
                            dtype=float)
        sol, info = cg(op, rhs_packed, x0=x0, rtol=1e-12, atol=0.0,
                       maxiter=20 * self.pack.dim)
        if info != 0:
            raise RuntimeError(f"conjugate gradient failed to converge (info={info})")
        return sol

    def residual(self, x_packed, rhs_packed):
        """Stationarity residual of the packed ridge system."""
        if self.dense:
            ax = 2.0 * (self.g_sym @ x_packed) + (self.p + 1) * self.eta * x_packed
        else:
            m = self.pack.unpack(x_packed)
            ax = self.pack.pack(
                2.0 * self.pre.apply_G(m, self.subjects) + (self.p + 1) * self.eta * m
            )
        return float(np.linalg.norm(ax - rhs_packed))


def _iterate(system, pre, config, initial=None, track=False):
    """Run the accelerated ADMM on the given loss system."""
    p = pre.p
    q = pre.q_total
    dims2 = pre.dims + pre.dims
    pk = pre.pack
    eta = config.eta
    system.set_eta(eta)  # shared systems (CV cells) may carry a stale eta
    zero = np.zeros((q, q))

    if initial is None:
        b = zero.copy()
        d = [zero.copy() for _ in range(p + 1)]
        v = [zero.copy() for _ in range(p + 1)]
        alpha = 1.0
    else:
        b = square_unfold(np.asarray(initial.B, dtype=float))
        if np.abs(b - b.T).max() > 1e-10 * max(np.abs(b).max(), 1e-300):
            raise ValueError("initial B must have a symmetric square unfolding")
        d = [square_unfold(np.asarray(x, dtype=float)) for x in initial.D]
        v = [square_unfold(np.asarray(x, dtype=float)) for x in initial.V]
        alpha = initial.alpha
    d_hat = [x.copy() for x in d]
    v_hat = [x.copy() for x in v]
    d_prev = [x.copy() for x in d]
    v_prev = [x.copy() for x in v]

    thr_psd = config.lam * config.beta / eta
    thr_one = config.lam * (1.0 - config.beta) / (p * eta)

    def d0_objective(d0_mat, eigs):
        val = system.quad(pk.pack(d0_mat))
        val += config.lam * config.beta * float(eigs.sum())
        if config.beta < 1.0:
            val += (config.lam * (1.0 - config.beta) / p
                    * sum(_one_way_trace_norms(d0_mat, pre.dims)))
        return val

    if initial is None:
        obj_prev = system.quad(pk.pack(d[0]))  # zero init: penalties vanish
    else:
        w0 = np.linalg.eigvalsh((d[0] + d[0].T) / 2.0)
        obj_prev = d0_objective(d[0], np.abs(w0))
    trace = [obj_prev]
    if not math.isfinite(obj_prev):
        err = RuntimeError(
            f"non-finite objective ({obj_prev}) at initialization; "
            "check the data for NaN or infinite values"
        )
        err.trace = np.asarray(trace)
        raise err
    stationarity = [] if track else None
    max_skew = 0.0
    converged = False
    n_iters = 0
    b_packed = None

    for t in range(config.max_iters):
        n_iters = t + 1
        acc = d_hat[0] - v_hat[0]
        for k in range(1, p + 1):
            acc = acc + d_hat[k] - v_hat[k]
        rhs = system.h_packed + eta * pk.pack(acc)
        b_packed = system.solve(rhs, x0=b_packed)
        b = pk.unpack(b_packed)
        if track:
            stationarity.append(system.residual(b_packed, rhs))
            max_skew = max(max_skew, float(np.abs(b - b.T).max()))

        eigs = None
        for k in range(p + 1):
            ak = b + v_hat[k]
            if k == 0:
                dk, eigs = _prox_psd_mat(ak, thr_psd)
            elif thr_one == 0.0:
                dk = ak.copy()
            else:
                m = one_way_unfold(ak.reshape(dims2), k - 1)
                u_m, s, vt = np.linalg.svd(m, full_matrices=False)
                s = np.maximum(s - thr_one, 0.0)
                dk = square_unfold(one_way_fold((u_m * s) @ vt, k - 1, dims2))
            vk = v_hat[k] + b - dk
            d_prev[k], d[k] = d[k], dk
            v_prev[k], v[k] = v[k], vk

        obj = d0_objective(d[0], eigs)
        trace.append(obj)
        if not math.isfinite(obj):
            err = RuntimeError(
                f"non-finite objective ({obj}) at iteration {t + 1}; "
                "the iteration diverged"
            )
            err.trace = np.asarray(trace)
            raise err

        alpha_next = (1.0 + math.sqrt(1.0 + 4.0 * alpha * alpha)) / 2.0
        if obj > obj_prev:
            # restart: drop momentum for this step
            alpha_next = 1.0
            gamma = 0.0
        else:
            gamma = (alpha - 1.0) / alpha_next
        for k in range(p + 1):
            if gamma == 0.0:
                d_hat[k] = d[k].copy()
                v_hat[k] = v[k].copy()
            else:
                d_hat[k] = d[k] + gamma * (d[k] - d_prev[k])
                v_hat[k] = v[k] + gamma * (v[k] - v_prev[k])
        alpha = alpha_next

        rel = abs(obj - obj_prev) / max(abs(obj_prev), 1e-300)
        obj_prev = obj
        if rel < config.tol:
            # Guard against false plateaus: from a cold start the objective
            # at D_0 can sit exactly at its initial value for several
            # iterations while D_0 is pinned at zero and the duals ramp up.
            # Require consensus between B and the D blocks (relative to the
            # iterate scale, with the first-step magnitude of B as an
            # absolute anchor) before declaring convergence.
            r_cons = max(float(np.linalg.norm(b - d[k])) for k in range(p + 1))
            anchor = max(
                float(np.linalg.norm(b)),
                float(np.linalg.norm(d[0])),
                float(np.linalg.norm(system.h_packed)) / ((p + 1) * eta),
            )
            if r_cons <= math.sqrt(config.tol) * max(anchor, 1e-300):
                converged = True
                break

        if config.adaptive_eta and (t + 1) % 10 == 0:
            r_primal = math.sqrt(sum(float(((b - d[k]) ** 2).sum()) for k in range(p + 1)))
            r_dual = eta * math.sqrt(sum(
                float(((d[k] - d_prev[k]) ** 2).sum()) for k in range(p + 1)))
            new_eta = eta
            if r_primal > 10.0 * r_dual:
                new_eta = eta * 2.0
            elif r_dual > 10.0 * r_primal:
                new_eta = eta / 2.0
            if new_eta != eta:
                scale = eta / new_eta
                for k in range(p + 1):
                    v[k] *= scale
                    v_hat[k] *= scale
                    v_prev[k] *= scale
                eta = new_eta
                system.set_eta(eta)
                thr_psd = config.lam * config.beta / eta
                thr_one = config.lam * (1.0 - config.beta) / (p * eta)
                alpha = 1.0
                d_hat = [x.copy() for x in d]
                v_hat = [x.copy() for x in v]

    primal = np.array([np.linalg.norm(b - d[k]) for k in range(p + 1)])
    final = FitState(
        B=b.reshape(dims2).copy(),
        D=[x.reshape(dims2).copy() for x in d],
        V=[x.reshape(dims2).copy() for x in v],
        alpha=alpha,
    )
    return {
        "coeffs": d[0].reshape(dims2).copy(),
        "converged": converged,
        "n_iters": n_iters,
        "objective_value": obj_prev,
        "primal_residuals": primal,
        "objective_trace": np.asarray(trace),
        "eta_final": eta,
        "stationarity": None if stationarity is None else np.asarray(stationarity),
        "max_skew": max_skew,
        "state": final,
    }


def admm_fit(data, cross, grams, config, initial=None, pre=None, track=False):
    """Fit the coefficient tensor by the accelerated ADMM.

    Returns a CovarianceFit whose ``coeffs`` is the final PSD-projected
    iterate.  ``pre`` may carry a reusable precomputation bundle; ``track``
    additionally records per-iteration stationarity residuals and the worst
    symmetry defect of the ridge iterate.
    """
    if pre is None:
        pre = precompute(data, cross, grams)
    system = _System(pre, None, config.eta, g_sym=pre.G_sym)
    out = _iterate(system, pre, config, initial=initial, track=track)
    return CovarianceFit(
        coeffs=out["coeffs"], config=config, grams=pre.grams,
        converged=out["converged"], n_iters=out["n_iters"],
        objective_value=out["objective_value"],
        primal_residuals=out["primal_residuals"],
        objective_trace=out["objective_trace"], eta_final=out["eta_final"],
        stationarity=out["stationarity"], max_skew=out["max_skew"],
        state=out["state"],
    )


def rank_report(fit, threshold=None):
    """(two-way rank, one-way ranks...) of the fitted coefficients.

    Counts eigenvalues of the square unfolding and singular values of each
    one-way unfolding above ``threshold`` times the respective maximum.
    """
    if threshold is None:
        threshold = fit.config.rank_threshold
    b_sq = fit.coeff_square()
    w = np.linalg.eigvalsh((b_sq + b_sq.T) / 2.0)
    lam_max = w.max() if w.size else 0.0
    if lam_max <= 0.0:
        two_way = 0
    else:
        two_way = int((w > threshold * lam_max).sum())
    ranks = [two_way]
    for k in range(fit.coeffs.ndim // 2):
        s = np.linalg.svd(one_way_unfold(fit.coeffs, k), compute_uv=False)
        s_max = s.max() if s.size else 0.0
        ranks.append(0 if s_max <= 0.0 else int((s > threshold * s_max).sum()))
    return tuple(ranks)


def cv_select(data, grams, lambda_grid=DEFAULT_LAMBDA_GRID,
              beta_grid=DEFAULT_BETA_GRID, folds=None, base=None, mean=None,
              n_folds=5, fold_seed=0):
    """Grid search (lambda, beta) by k-fold held-out loss.

    For every fold, the fit uses the training subjects' loss pieces (derived
    from the shared full-data precomputation by subtraction) and is scored by
    the held-out squared-error loss on the validation subjects.  Ties are
    broken toward larger lambda, then larger beta.  Returns the winning
    FitConfig and the (len(lambda_grid), len(beta_grid)) score table.
    """
    lambda_grid = list(lambda_grid)
    beta_grid = list(beta_grid)
    if not lambda_grid or not beta_grid:
        raise ValueError("empty tuning grid")
    if base is None:
        base = FitConfig()
    if folds is None:
        folds = make_folds(data, n_folds, fold_seed)
    cross = cross_products(data, mean)
    pre = precompute(data, cross, grams, folds=folds)

    scores = np.zeros((len(lambda_grid), len(beta_grid)))
    for f in range(folds.n_folds):
        train = folds.train_subjects(f)
        valid = folds.valid_subjects(f)
        if pre.dense:
            g_train = (pre.G * pre.n - pre.G_fold[f]) / train.size
            g_sym = pre.pack.pack_operator(g_train)
        else:
            g_sym = None
        system = _System(pre, train, base.eta, g_sym=g_sym)
        for bj, beta in enumerate(beta_grid):
            for li, lam in enumerate(lambda_grid):
                cfg = replace(base, lam=float(lam), beta=float(beta))
                out = _iterate(system, pre, cfg)
                b_sq = square_unfold(out["coeffs"])
                scores[li, bj] += pre.loss_direct(b_sq, valid)
    scores /= folds.n_folds

    best = None
    for li, lam in enumerate(lambda_grid):
        for bj, beta in enumerate(beta_grid):
            cand = (scores[li, bj], -lam, -beta)
            if best is None or cand < best[0]:
                best = (cand, li, bj)
    li, bj = best[1], best[2]
    chosen = replace(base, lam=float(lambda_grid[li]), beta=float(beta_grid[bj]))
    return chosen, scores
