"""Apply the singular operator, verify its factorization through the
change of variables, solve resolvents, compute spectra, and run the
mollification-removal convergence study.

The factorization check is deliberately one-sided: the lower-order part
is measured as  A(Theta v) - (1-Delta) v  with both pieces evaluated by
direct application, never by reusing the algebraic expansion, so it
genuinely tests that the assembled transforms produce a lower-order
remainder.

Studies fan out over the mollification schedule with one shared cutoff
pair (M, N), re-certified at every scale; reductions are deterministic
for fixed seeds.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    CertificateError,
    ConfigurationError,
    EigenSolverError,
    ShiftTooSmallError,
)
from .linops import (
    LinOp,
    add,
    compose,
    deriv_op,
    mult_field_op,
    multiplier_op,
    operator_norm,
    random_hermitian,
    sobolev_op,
    subtract,
)
from .lp import DyadicPartition, build_partition
from .noise import EnhancedData, NoiseSpec, enhance_anderson2d, enhance_generic
from .torus import (
    SpectralField,
    constant_field,
    div,
    field_from_coeffs,
    grad,
    grid,
    l2_norm,
    pointwise_product,
    zero_field,
)
from .transforms import (
    TransformStack,
    build_stack,
    choose_cutoffs,
    exponential_certificates,
    EXP_SMALLNESS,
)


class AOperator:
    """Matrix-free (1-Delta) + grad V . grad + (xi + c) + div(rho .)."""

    def __init__(self, data: EnhancedData, include_constant: bool = True):
        g = data.grid
        self.data = data
        parts = [multiplier_op(g.sobolev_symbol(2.0))]
        c = data.c_eps if include_constant else 0.0
        potential = data.xi + constant_field(g, c)
        if np.any(potential.coeffs != 0.0):
            parts.append(mult_field_op(g, potential.coeffs))
        if l2_norm(data.V) > 0.0:
            gv = grad(data.V)
            parts.append(add(*[
                compose(mult_field_op(g, gv[l].coeffs), deriv_op(g, l))
                for l in range(g.d)
            ]))
        if not data.is_symmetric():
            parts.append(add(*[
                compose(deriv_op(g, l), mult_field_op(g, data.rho[l].coeffs))
                for l in range(g.d)
            ]))
        self.op = add(*parts)
        # symmetric as a plain L^2 operator only without drift and potential
        # gradient terms (the xi + c multiplication is always symmetric)
        self.l2_symmetric = data.is_symmetric() and l2_norm(data.V) == 0.0

    def apply(self, u: SpectralField) -> SpectralField:
        return field_from_coeffs(u.grid, self.op.apply(u.coeffs))


def apply_A(u: SpectralField, data: EnhancedData) -> SpectralField:
    """Direct dealiased evaluation of all four terms."""
    return AOperator(data).apply(u)


def apply_A_tilde(v: SpectralField, stack: TransformStack):
    """Conjugated operator, computed both ways.

    (a) the conjugation  e^{P>M(W+V)} A(e^{P>M W} v);
    (b) the exact expansion  L_M v + V~^M . grad v + Z~^M v + rho-term
    with L_M = 1 - div(e^{P>M(V+2W)} grad .).  Returns (a) and the
    relative discrepancy |a - b| / |a| as an algebra diagnostic.
    """
    data = stack.data
    g = data.grid
    inner = pointwise_product(stack.e_pw, v)
    a = pointwise_product(stack.e_pwv, apply_A(inner, data))

    gv = grad(v)
    flux = [pointwise_product(stack.e_pv2w, c) for c in gv]
    b = v - div(flux)
    for vt, c in zip(stack.V_tilde_M, gv):
        b = b + pointwise_product(vt, c)
    b = b + pointwise_product(stack.Z_tilde_M, v)
    if not data.is_symmetric():
        carried = [pointwise_product(r, inner) for r in data.rho]
        b = b + pointwise_product(stack.e_pwv, div(carried))
    denom = l2_norm(a)
    discrepancy = l2_norm(a - b) / denom if denom > 0 else 0.0
    return a, discrepancy


@dataclass
class FactorizationReport:
    eps: float
    M: int
    N: int
    delta_prime: float
    norm_h2_l2: float
    norm_h2_hdelta: float
    c_lo: float
    c_hi: float
    residual_factorization: float
    residual_theta_roundtrip: float

    def __post_init__(self):
        if not self.c_lo > 0:
            raise CertificateError(f"norm-equivalence floor c_lo = {self.c_lo} <= 0")
        if self.residual_factorization < 0 or self.residual_theta_roundtrip < 0:
            raise ConfigurationError("residuals must be nonnegative")


def _h2_model_field(g, rng, kmax) -> SpectralField:
    """Unit-H^2 random probe: an L^2-normalized band-limited draw pushed
    through the inverse Sobolev weight."""
    c = random_hermitian(g, rng, kmax=kmax)
    c = c / np.sqrt(np.vdot(c, c).real)
    return field_from_coeffs(g, g.sobolev_symbol(-2.0) * c)


def equivalence_constants(stack: TransformStack, trials: int = 50,
                          seed: int = 3000):
    """Measured constants of (|A Theta u| + |Theta u|) / (|(1-Delta)u| + |u|)
    over random H^2 probes; equal to one identically for zero data."""
    g = stack.grid
    a_op = AOperator(stack.data)
    theta = stack.op("theta")
    rng = np.random.default_rng(seed)
    kmax = 2.0**stack.partition.j_max
    ratios = []
    for _ in range(trials):
        u = _h2_model_field(g, rng, kmax)
        tu = field_from_coeffs(g, theta.apply(u.coeffs))
        atu = a_op.apply(tu)
        num = l2_norm(atu) + l2_norm(tu)
        den = l2_norm(field_from_coeffs(g, g.sobolev_symbol(2.0) * u.coeffs)) \
            + l2_norm(u)
        ratios.append(num / den)
    return min(ratios), max(ratios)


def factorization_remainder(stack: TransformStack, trials: int = 20,
                            seed: int = 2000, delta_prime: float = 0.1,
                            power_iters: int = 10) -> FactorizationReport:
    """Measure lower(v) := A(Theta v) - (1-Delta) v as a map H^2 -> L^2 and
    H^2 -> H^{delta'}, plus the norm-equivalence constants."""
    g = stack.grid
    a_op = AOperator(stack.data)
    theta = stack.op("theta")
    lap1 = multiplier_op(g.sobolev_symbol(2.0))
    lower = subtract(compose(a_op.op, theta), lap1)
    kmax = 2.0**stack.partition.j_max
    norm_l2 = operator_norm(lower, g, s_in=2.0, s_out=0.0, iters=power_iters,
                            restarts=1, seed=seed, kmax=kmax)
    norm_hd = operator_norm(lower, g, s_in=2.0, s_out=delta_prime,
                            iters=power_iters, restarts=1, seed=seed + 1,
                            kmax=kmax)
    c_lo, c_hi = equivalence_constants(stack, trials=trials, seed=seed + 2)

    rng = np.random.default_rng(seed + 3)
    probe = _h2_model_field(g, rng, kmax)
    lam_w = stack.op("lambda").apply(probe.coeffs)
    ups_w = g.sobolev_symbol(2.0) * stack.op("upsilon").apply(probe.coeffs)
    res_fact = float(np.sqrt(np.vdot(lam_w - ups_w, lam_w - ups_w).real))
    round_ = theta.apply(stack.op("theta_inv").apply(probe.coeffs))
    res_round = float(np.sqrt(np.vdot(round_ - probe.coeffs,
                                      round_ - probe.coeffs).real))
    return FactorizationReport(
        eps=stack.data.eps, M=stack.M, N=stack.N, delta_prime=delta_prime,
        norm_h2_l2=norm_l2, norm_h2_hdelta=norm_hd, c_lo=c_lo, c_hi=c_hi,
        residual_factorization=res_fact, residual_theta_roundtrip=res_round,
    )


# ---------------------------------------------------------------------------
# preconditioned iterative solvers (matrix-free, deterministic)

def _inner(a, b) -> float:
    return float(np.vdot(a, b).real)


def _pcg(apply_s, precond, b, tol, max_iter):
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.sqrt(_inner(b, b))
    if bnorm == 0.0:
        return x, 0.0, 0
    z = precond(r)
    p = z.copy()
    rz = _inner(r, z)
    for it in range(1, max_iter + 1):
        sp = apply_s(p)
        denom = _inner(p, sp)
        if denom <= 0.0:
            raise ShiftTooSmallError(
                "conjugate gradients found non-positive curvature; "
                "increase the resolvent shift"
            )
        alpha = rz / denom
        x += alpha * p
        r -= alpha * sp
        rn = np.sqrt(_inner(r, r))
        if rn <= tol * bnorm:
            return x, rn / bnorm, it
        z = precond(r)
        rz_new = _inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ShiftTooSmallError(
        f"resolvent solve stagnated after {max_iter} iterations "
        f"(relative residual {rn / bnorm:.3e}); increase the shift"
    )


def _bicgstab(apply_s, precond, b, tol, max_iter):
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.sqrt(_inner(b, b))
    if bnorm == 0.0:
        return x, 0.0, 0
    r0 = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    for it in range(1, max_iter + 1):
        rho_new = np.vdot(r0, r)
        if rho_new == 0.0:
            break
        if it == 1:
            p = r.copy()
        else:
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
        rho = rho_new
        ph = precond(p)
        v = apply_s(ph)
        alpha = rho / np.vdot(r0, v)
        s = r - alpha * v
        sn = np.sqrt(_inner(s, s))
        if sn <= tol * bnorm:
            x += alpha * ph
            return x, sn / bnorm, it
        sh = precond(s)
        t = apply_s(sh)
        omega = np.vdot(t, s) / np.vdot(t, t)
        x += alpha * ph + omega * sh
        r = s - omega * t
        rn = np.sqrt(_inner(r, r))
        if rn <= tol * bnorm:
            return x, rn / bnorm, it
    raise ShiftTooSmallError(
        f"resolvent solve (bicgstab) stagnated after {max_iter} iterations; "
        f"increase the shift"
    )


@dataclass
class ResolventResult:
    u: SpectralField
    residual: float
    iterations: int


class ResolventOperator:
    """Matrix-free (lam0 + A)^{-1} via a preconditioned Krylov solver with
    the constant-coefficient preconditioner (lam0 + 1 - Delta)^{-1}."""

    def __init__(self, data: EnhancedData, lam0: float, tol: float = 1e-10,
                 max_iter: int = 400, include_constant: bool = True):
        g = data.grid
        self.g = g
        self.lam0 = lam0
        self.tol = tol
        self.max_iter = max_iter
        a = AOperator(data, include_constant=include_constant)
        self.a_op = a
        shift = multiplier_op(np.full(g.shape, lam0, dtype=float))
        self.s_op = add(shift, a.op)
        psym = 1.0 / (lam0 + g.sobolev_symbol(2.0))
        self.precond = lambda r: psym * r
        self.symmetric = a.l2_symmetric
        self.last_iterations = 0

    def solve_coeffs(self, b):
        solver = _pcg if self.symmetric else _bicgstab
        x, res, it = solver(self.s_op.apply, self.precond, b, self.tol,
                            self.max_iter)
        self.last_iterations = it
        return x

    def solve_adjoint_coeffs(self, b):
        solver = _pcg if self.symmetric else _bicgstab
        apply_adj = self.s_op.adjoint
        x, res, it = solver(apply_adj, self.precond, b, self.tol, self.max_iter)
        self.last_iterations = it
        return x

    def linop(self) -> LinOp:
        return LinOp(self.solve_coeffs, self.solve_adjoint_coeffs)

    def solve(self, f: SpectralField) -> ResolventResult:
        x = self.solve_coeffs(f.coeffs)
        resid = self.s_op.apply(x) - f.coeffs
        rel = np.sqrt(_inner(resid, resid)) / max(np.sqrt(_inner(f.coeffs,
                                                                 f.coeffs)), 1e-300)
        return ResolventResult(field_from_coeffs(self.g, x), float(rel),
                               self.last_iterations)


def resolvent(f: SpectralField, data: EnhancedData, lam0: float,
              tol: float = 1e-10) -> SpectralField:
    """Solve (lam0 + A) u = f to the requested relative residual."""
    return ResolventOperator(data, lam0, tol).solve(f).u


# ---------------------------------------------------------------------------
# spectrum by shift-invert subspace iteration

def _orthonormalize(vectors):
    out = []
    for v in vectors:
        w = v.copy()
        for u in out:
            w -= np.vdot(u, w) * u
        nw = np.sqrt(_inner(w, w))
        if nw > 1e-14:
            out.append(w / nw)
    return out


def spectrum(data: EnhancedData, lam0: float, k_eigs: int, seed: int = 0,
             tol: float = 1e-6, max_sweeps: int = 500, buffer: int = 4,
             include_constant: bool = True) -> np.ndarray:
    """Lowest k eigenvalues by subspace iteration on (lam0 + A)^{-1}.

    The symmetric case (rho = 0, V = 0) uses Rayleigh-Ritz on A; otherwise
    Ritz values of the symmetrized resolvent are returned with a warning.
    """
    g = data.grid
    rop = ResolventOperator(data, lam0, include_constant=include_constant)
    symmetric = rop.symmetric
    if not symmetric:
        warnings.warn(
            "operator is not symmetric; returning Ritz values of the "
            "symmetrized resolvent (singular-value-like, not eigenvalues)",
            RuntimeWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    m = k_eigs + buffer
    X = _orthonormalize([random_hermitian(g, rng) for _ in range(m)])
    a_apply = rop.a_op.op.apply

    def res_apply(v):
        if symmetric:
            return rop.solve_coeffs(v)
        forward = rop.solve_coeffs(v)
        backward = rop.solve_adjoint_coeffs(v)
        return 0.5 * (forward + backward)

    for sweep in range(1, max_sweeps + 1):
        X = _orthonormalize([res_apply(x) for x in X])
        if symmetric:
            ax = [a_apply(x) for x in X]
            H = np.array([[_inner(xi, axj) for axj in ax] for xi in X])
            H = 0.5 * (H + H.T)
            vals, vecs = np.linalg.eigh(H)
            order = np.argsort(vals)
            ritz_vals = vals[order][:k_eigs]
            ritz_vecs = [
                sum(vecs[i, order[j]] * X[i] for i in range(len(X)))
                for j in range(k_eigs)
            ]
            ok = True
            for lamb, phi in zip(ritz_vals, ritz_vecs):
                r = a_apply(phi) - lamb * phi
                if np.sqrt(_inner(r, r)) > tol * np.sqrt(_inner(phi, phi)):
                    ok = False
                    break
            if ok:
                return np.array(ritz_vals)
        else:
            sx = [res_apply(x) for x in X]
            H = np.array([[_inner(xi, sxj) for sxj in sx] for xi in X])
            H = 0.5 * (H + H.T)
            mu, _ = np.linalg.eigh(H)
            mu = mu[::-1][:k_eigs]  # largest resolvent Ritz values
            if sweep >= 25:
                return np.array(sorted(1.0 / mu - lam0))
    raise EigenSolverError(
        f"subspace iteration did not converge in {max_sweeps} sweeps "
        f"(tolerance {tol:g})"
    )


# ---------------------------------------------------------------------------
# the mollification-removal convergence study

@dataclass
class StudyConfig:
    n: int = 256
    d: int = 2
    eps_list: tuple = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6)
    seed: int = 0
    kind: str = "anderson2d"
    k_eigs: int = 5
    lam0: float | None = None
    delta_prime: float = 0.1
    tol_resolvent: float = 1e-10
    power_iters_res: int = 8
    power_iters_fac: int = 8
    power_iters_cert: int = 30
    equivalence_trials: int = 12
    eig_tol: float = 1e-6
    eig_buffer: int = 4
    noise: NoiseSpec | None = None

    def __post_init__(self):
        eps = tuple(self.eps_list)
        if len(eps) < 2 or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("eps schedule must be strictly decreasing")
        object.__setattr__(self, "eps_list", eps)


@dataclass
class StudyResult:
    config: StudyConfig
    lam0: float
    M: int
    N: int
    rows: list = dc_field(default_factory=list)
    pairs: list = dc_field(default_factory=list)
    stage_seconds: dict = dc_field(default_factory=dict)

    def eigenvalue_gap_shrink_fraction(self) -> float:
        """Fraction of (eigenvalue, adjacent-pair) combinations whose gaps
        shrink from one mollification step to the next."""
        eigs = np.array([row["eigs"] for row in self.rows])
        gaps = np.abs(np.diff(eigs, axis=0))
        if gaps.shape[0] < 2:
            return 1.0
        shrink = gaps[1:] < gaps[:-1]
        return float(np.mean(shrink))

    def control_drift_ratio(self) -> float:
        lam1_control = [row["lambda1_control"] for row in self.rows]
        lam1 = [row["eigs"][0] for row in self.rows]
        control = abs(lam1_control[-1] - lam1_control[0])
        renorm = abs(lam1[-1] - lam1[0])
        return control / max(renorm, 1e-300)


def _make_data(cfg: StudyConfig, eps: float) -> EnhancedData:
    g = grid(cfg.d, cfg.n)
    if cfg.kind == "anderson2d":
        return enhance_anderson2d(g, eps, cfg.seed)
    spec = cfg.noise or NoiseSpec(cfg.kind, seed=cfg.seed)
    return enhance_generic(spec, g, eps)


def select_shift(datasets, tol: float, seed: int, start: float = 10.0,
                 cap: float = 1e6) -> float:
    """Double the shift from `start` until the preconditioned solver
    converges within 200 iterations on every dataset; fixed once per
    study so resolvent differences are comparable across eps."""
    g = datasets[0].grid
    rng = np.random.default_rng(seed)
    probe = random_hermitian(g, rng)
    probe /= np.sqrt(_inner(probe, probe))
    lam0 = start
    while lam0 <= cap:
        try:
            for data in datasets:
                rop = ResolventOperator(data, lam0, tol=tol, max_iter=200)
                rop.solve_coeffs(probe)
            return lam0
        except ShiftTooSmallError:
            lam0 *= 2.0
    raise ShiftTooSmallError(f"no workable shift below {cap:g}")


def convergence_study(cfg: StudyConfig) -> StudyResult:
    times: dict[str, float] = {}
    tic = time.perf_counter()
    g = grid(cfg.d, cfg.n)
    P = build_partition(g)
    datasets = [_make_data(cfg, eps) for eps in cfg.eps_list]
    times["enhance"] = time.perf_counter() - tic

    # one cutoff pair for the whole schedule, chosen at the roughest scale
    # and re-certified at every other scale
    tic = time.perf_counter()
    ref = choose_cutoffs(datasets[-1], P, probe_seed=cfg.seed * 997 + 11,
                         power_iters=cfg.power_iters_cert)
    stacks = []
    for data in datasets:
        if data is datasets[-1]:
            stacks.append(ref)
            continue
        plus, minus = exponential_certificates(data, ref.M)
        if plus > EXP_SMALLNESS or minus > EXP_SMALLNESS:
            raise CertificateError(
                f"cutoff M={ref.M} chosen at eps={datasets[-1].eps:g} fails "
                f"re-certification at eps={data.eps:g}: ({plus:.3f}, {minus:.3f})"
            )
        stacks.append(build_stack(data, P, ref.M, ref.N,
                                  probe_seed=cfg.seed * 997 + 11,
                                  power_iters=cfg.power_iters_cert))
    times["stacks"] = time.perf_counter() - tic

    tic = time.perf_counter()
    lam0 = cfg.lam0 or select_shift(datasets, cfg.tol_resolvent,
                                    cfg.seed * 31 + 7)
    times["shift"] = time.perf_counter() - tic

    result = StudyResult(cfg, lam0, ref.M, ref.N)

    tic = time.perf_counter()
    for data, stack in zip(datasets, stacks):
        eigs = spectrum(data, lam0, cfg.k_eigs, seed=cfg.seed * 13 + 3,
                        tol=cfg.eig_tol, buffer=cfg.eig_buffer)
        control = spectrum(data.without_renormalization(), lam0, 1,
                           seed=cfg.seed * 13 + 3, tol=cfg.eig_tol,
                           buffer=cfg.eig_buffer)
        c_lo, c_hi = equivalence_constants(stack, trials=cfg.equivalence_trials,
                                           seed=cfg.seed * 77 + 5)
        result.rows.append({
            "seed": cfg.seed, "eps": data.eps, "M": stack.M, "N": stack.N,
            "c_eps": data.c_eps, "eigs": list(eigs),
            "lambda1_control": float(control[0]),
            "c_lo": c_lo, "c_hi": c_hi,
        })
    times["spectra"] = time.perf_counter() - tic

    tic = time.perf_counter()
    lap2_inv = sobolev_op(g, -2.0)
    for (d1, s1), (d2, s2) in zip(zip(datasets, stacks),
                                  list(zip(datasets, stacks))[1:]):
        r1 = ResolventOperator(d1, lam0, tol=cfg.tol_resolvent).linop()
        r2 = ResolventOperator(d2, lam0, tol=cfg.tol_resolvent).linop()
        d_res = operator_norm(subtract(r1, r2), g, iters=cfg.power_iters_res,
                              restarts=1, seed=cfg.seed * 51 + 9)
        t1 = compose(AOperator(d1).op, s1.op("theta"))
        t2 = compose(AOperator(d2).op, s2.op("theta"))
        d_fac = operator_norm(subtract(t1, t2), g, s_in=2.0, s_out=0.0,
                              iters=cfg.power_iters_fac, restarts=1,
                              seed=cfg.seed * 53 + 13)
        result.pairs.append({
            "eps_coarse": d1.eps, "eps_fine": d2.eps,
            "d_res": d_res, "d_fac": d_fac,
        })
    times["differences"] = time.perf_counter() - tic

    result.stage_seconds = times
    return result
