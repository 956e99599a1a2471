"""The certified change-of-variables stack.

Given an enhanced tuple at scale eps, a frequency cutoff M tames the
high-frequency part of the exponentials (L-infinity smallness) and a
cutoff N tames the paracontrolled correction (operator-norm smallness).
The stack then assembles

    Lambda w   = (1-Delta)w - div((e^{P>M(V+2W)} - 1) prec grad w)
    LambdaBar w = (1-Delta)w + (e^{P>M(-W-V)} - 1) prec (1-Delta)w
    Upsilon, UpsilonBar  with  Lambda = (1-Delta) Upsilon  exactly,
    Phi w = w - Lambda^{-1} P_{>N} ( w prec Z~^M
              + div(grad w prec (e^{P>M(V+2W)} - 1))
              + e^{P>M(V+W)} div(rho e^{P>M W} w) )
    Gamma = Phi^{-1}  (geometric series)
    Theta = e^{P>M W} . Gamma . Upsilon^{-1} . UpsilonBar^{-1}

The modified potential Z~^M is the exact zeroth-order coefficient of the
conjugated operator (see operators.apply_A_tilde), so the paracontrolled
subtraction inside Phi matches the conjugation identically:

    Z~^M = e^{P>M(V+2W)} ( Z - W + Delta P<=M W + |grad W|^2
           - |grad P>M W|^2 - grad V . grad P<=M W ) + (e^{P>M(V+2W)} - 1).

All inverses are geometric series of certified contractions, truncated
at a 1e-12 relative increment or 60 terms.  The stack is immutable after
construction; applications are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import CertificateError, ConfigurationError, ResolutionError
from .linops import (
    LinOp,
    add,
    compose,
    deriv_op,
    identity_op,
    mult_field_op,
    multiplier_op,
    neumann_inverse_op,
    operator_norm,
    para_high_op,
    para_low_op,
    scale,
    subtract,
)
from .lp import DyadicPartition
from .noise import EnhancedData, read_meta, save_enhanced, load_enhanced
from .torus import (
    SpectralField,
    constant_field,
    exp_field,
    field_from_coeffs,
    grad,
    l2_norm,
    laplacian,
    pointwise_product,
    project_frequencies,
    read_pcf1,
    to_physical,
    write_pcf1,
)

EXP_SMALLNESS = 0.25
OPERATOR_SMALLNESS = 0.5
NEUMANN_TOL = 1e-12
NEUMANN_MAX_TERMS = 60
DEFAULT_SIGMAS = (-2.0, 0.0, 1.0, 2.0)


@dataclass
class TransformStack:
    data: EnhancedData
    partition: DyadicPartition
    M: int
    N: int
    sigma_list: tuple
    probe_seed: int
    power_iters: int
    restarts: int
    # cached exponentials e^{+-P>M W}, e^{+-P>M(V+W)}, e^{+-P>M(V+2W)}
    e_pw: SpectralField = None
    e_pw_inv: SpectralField = None
    e_pwv: SpectralField = None
    e_pwv_inv: SpectralField = None
    e_pv2w: SpectralField = None
    e_pv2w_inv: SpectralField = None
    Z_tilde_M: SpectralField = None
    V_tilde_M: tuple = None
    cert_exp_plus: float = 0.0
    cert_exp_minus: float = 0.0
    cert_upsilon: dict = dc_field(default_factory=dict)
    cert_phi: float = 0.0
    _ops: dict = dc_field(default_factory=dict)

    @property
    def grid(self):
        return self.data.grid

    def op(self, name: str) -> LinOp:
        return self._ops[name]


def _exp_certificate(f: SpectralField) -> float:
    return float(np.max(np.abs(to_physical(f) - 1.0)))


def modified_potentials(data: EnhancedData, M: int):
    """Exact M-modified zeroth-order potential and gradient coefficient."""
    g = data.grid
    Wp = project_frequencies(data.W, M, "high")
    Wq = data.W - Wp
    inner = data.Z - data.W + laplacian(Wq)
    for c_full, c_high in zip(grad(data.W), grad(Wp)):
        inner = inner + pointwise_product(c_full, c_full) \
            - pointwise_product(c_high, c_high)
    if l2_norm(data.V) > 0.0:
        for cv, cq in zip(grad(data.V), grad(Wq)):
            inner = inner - pointwise_product(cv, cq)
    Vp = project_frequencies(data.V, M, "high")
    e_pv2w = exp_field(Vp + 2.0 * Wp)
    z_tilde_m = pointwise_product(e_pv2w, inner) + (e_pv2w - constant_field(g, 1.0))
    v_tilde_m = tuple(
        pointwise_product(e_pv2w, cf + cp)
        for cf, cp in zip(grad(data.V), grad(Vp))
    )
    return z_tilde_m, v_tilde_m


def build_stack(
    data: EnhancedData,
    partition: DyadicPartition,
    M: int,
    N: int,
    sigma_list: tuple = DEFAULT_SIGMAS,
    probe_seed: int = 1000,
    power_iters: int = 30,
    restarts: int = 2,
) -> TransformStack:
    """Assemble the full operator stack at the given cutoffs and measure
    all certificates (no search; see choose_cutoffs for the selection)."""
    g = data.grid
    if partition.grid != g:
        raise ConfigurationError("partition grid does not match the data grid")
    stack = TransformStack(
        data=data, partition=partition, M=M, N=N,
        sigma_list=tuple(sigma_list), probe_seed=probe_seed,
        power_iters=power_iters, restarts=restarts,
    )
    Wp = project_frequencies(data.W, M, "high")
    Vp = project_frequencies(data.V, M, "high")
    stack.e_pw = exp_field(Wp)
    stack.e_pw_inv = exp_field(-1.0 * Wp)
    stack.e_pwv = exp_field(Wp + Vp)
    stack.e_pwv_inv = exp_field(-1.0 * (Wp + Vp))
    stack.e_pv2w = exp_field(Vp + 2.0 * Wp)
    stack.e_pv2w_inv = exp_field(-1.0 * (Vp + 2.0 * Wp))
    stack.cert_exp_plus = _exp_certificate(stack.e_pv2w)
    stack.cert_exp_minus = _exp_certificate(stack.e_pwv_inv)
    stack.Z_tilde_M, stack.V_tilde_M = modified_potentials(data, M)
    _assemble_ops(stack)
    _measure_certificates(stack)
    return stack


def _assemble_ops(stack: TransformStack) -> None:
    g = stack.grid
    P = stack.partition
    one = constant_field(g, 1.0)
    E2 = stack.e_pv2w - one
    E3 = stack.e_pwv_inv - one
    lap1 = multiplier_op(g.sobolev_symbol(2.0))        # 1 - Delta
    lap1_inv = multiplier_op(g.sobolev_symbol(-2.0))
    ops = stack._ops

    # Lambda = (1-Delta) - sum_l d_l (E2 prec d_l .)
    low_e2 = para_low_op(P, E2.coeffs)
    para_div = add(*[
        compose(deriv_op(g, l), low_e2, deriv_op(g, l)) for l in range(g.d)
    ])
    ops["lambda"] = subtract(lap1, para_div)
    K = compose(lap1_inv, para_div)
    ops["upsilon"] = subtract(identity_op(), K)
    ops["K"] = K
    ops["upsilon_inv"] = neumann_inverse_op(K, g, s=1.0, tol=NEUMANN_TOL,
                                            max_terms=NEUMANN_MAX_TERMS)

    # LambdaBar = (1-Delta) + E3 prec (1-Delta) .
    low_e3 = para_low_op(P, E3.coeffs)
    bar_term = compose(low_e3, lap1)
    ops["lambda_bar"] = add(lap1, bar_term)
    Kbar = scale(compose(lap1_inv, bar_term), -1.0)
    ops["upsilon_bar"] = subtract(identity_op(), Kbar)
    ops["Kbar"] = Kbar
    ops["upsilon_bar_inv"] = neumann_inverse_op(Kbar, g, s=1.0, tol=NEUMANN_TOL,
                                                max_terms=NEUMANN_MAX_TERMS)

    # Phi = I - Lambda^{-1} P_{>N} G
    high_zm = para_high_op(P, stack.Z_tilde_M.coeffs)
    high_e2 = para_high_op(P, E2.coeffs)
    grad_para = add(*[
        compose(deriv_op(g, l), high_e2, deriv_op(g, l)) for l in range(g.d)
    ])
    g_parts = [high_zm, grad_para]
    if not stack.data.is_symmetric():
        m_pwv = mult_field_op(g, stack.e_pwv.coeffs)
        m_pw = mult_field_op(g, stack.e_pw.coeffs)
        rho_div = add(*[
            compose(deriv_op(g, l), mult_field_op(g, stack.data.rho[l].coeffs), m_pw)
            for l in range(g.d)
        ])
        g_parts.append(compose(m_pwv, rho_div))
    G = add(*g_parts)
    ops["G"] = G
    proj_n = multiplier_op(np.where(g.kabs > 2.0**stack.N, 1.0, 0.0))
    lam_inv = compose(ops["upsilon_inv"], lap1_inv)
    ops["lambda_inv"] = lam_inv
    phi_step = compose(lam_inv, proj_n, G)
    ops["phi_step"] = phi_step
    ops["phi"] = subtract(identity_op(), phi_step)
    ops["gamma"] = neumann_inverse_op(phi_step, g, s=1.0, tol=NEUMANN_TOL,
                                      max_terms=NEUMANN_MAX_TERMS)

    m_epw = mult_field_op(g, stack.e_pw.coeffs)
    m_epw_inv = mult_field_op(g, stack.e_pw_inv.coeffs)
    ops["theta"] = compose(m_epw, ops["gamma"], ops["upsilon_inv"],
                           ops["upsilon_bar_inv"])
    ops["theta_inv"] = compose(ops["upsilon_bar"], ops["upsilon"], ops["phi"],
                               m_epw_inv)


def _measure_certificates(stack: TransformStack) -> None:
    g = stack.grid
    kmax = 2.0**stack.partition.j_max
    stack.cert_upsilon = {}
    for s in stack.sigma_list:
        stack.cert_upsilon[s] = operator_norm(
            stack.op("K"), g, s_in=s, s_out=s, iters=stack.power_iters,
            restarts=stack.restarts, seed=stack.probe_seed, kmax=kmax,
        )
    stack.cert_phi = operator_norm(
        stack.op("phi_step"), g, s_in=1.0, s_out=1.0, iters=stack.power_iters,
        restarts=stack.restarts, seed=stack.probe_seed + 1, kmax=kmax,
    )


def exponential_certificates(data: EnhancedData, M: int) -> tuple[float, float]:
    """L-infinity smallness of the two governing exponentials at cutoff M
    (used both for selection and for re-certification across eps)."""
    Wp = project_frequencies(data.W, M, "high")
    Vp = project_frequencies(data.V, M, "high")
    plus = _exp_certificate(exp_field(Vp + 2.0 * Wp))
    minus = _exp_certificate(exp_field(-1.0 * (Wp + Vp)))
    return plus, minus


def choose_cutoffs(
    data: EnhancedData,
    partition: DyadicPartition,
    sigma_list: tuple = DEFAULT_SIGMAS,
    probe_seed: int = 1000,
    power_iters: int = 30,
    restarts: int = 2,
) -> TransformStack:
    """Smallest M with both exponential certificates <= 1/4, then the
    smallest N with the measured paracontrolled-correction norm <= 1/2.
    Both searches are capped at the partition's top block index; hitting
    the cap is a refusal, not a silent degradation."""
    cap = partition.j_max
    M = None
    for candidate in range(cap + 1):
        plus, minus = exponential_certificates(data, candidate)
        if plus <= EXP_SMALLNESS and minus <= EXP_SMALLNESS:
            M = candidate
            break
    if M is None:
        raise ResolutionError(
            f"no cutoff M <= {cap} reaches exponential smallness "
            f"{EXP_SMALLNESS}: last certificates ({plus:.3f}, {minus:.3f})"
        )
    stack = None
    for candidate in range(cap + 1):
        stack = build_stack(data, partition, M, candidate, sigma_list,
                            probe_seed, power_iters, restarts)
        if stack.cert_phi <= OPERATOR_SMALLNESS:
            break
        stack = None
    if stack is None:
        raise ResolutionError(
            f"no cutoff N <= {cap} reaches the paracontrolled smallness "
            f"{OPERATOR_SMALLNESS}"
        )
    worst = max(stack.cert_upsilon.values())
    if worst > OPERATOR_SMALLNESS:
        raise CertificateError(
            f"measured parametrix norm {worst:.3f} exceeds "
            f"{OPERATOR_SMALLNESS} at M={M}; data too rough for this grid"
        )
    return stack


# ---------------------------------------------------------------------------
# public application surface

def _wrap(stack: TransformStack, coeffs) -> SpectralField:
    return field_from_coeffs(stack.grid, coeffs)


def apply_lambda(w: SpectralField, stack: TransformStack,
                 which: str = "lambda") -> SpectralField:
    if which not in ("lambda", "lambda_bar"):
        raise ConfigurationError(f"which must be lambda or lambda_bar, got {which!r}")
    return _wrap(stack, stack.op(which).apply(w.coeffs))


def apply_upsilon(w: SpectralField, stack: TransformStack,
                  which: str = "upsilon", inverse: bool = False) -> SpectralField:
    if which not in ("upsilon", "upsilon_bar"):
        raise ConfigurationError(f"which must be upsilon or upsilon_bar, got {which!r}")
    name = which + ("_inv" if inverse else "")
    return _wrap(stack, stack.op(name).apply(w.coeffs))


def apply_phi(w: SpectralField, stack: TransformStack) -> SpectralField:
    return _wrap(stack, stack.op("phi").apply(w.coeffs))


def apply_gamma(w_sharp: SpectralField, stack: TransformStack) -> SpectralField:
    return _wrap(stack, stack.op("gamma").apply(w_sharp.coeffs))


@dataclass
class Theta:
    """Handle for the assembled change of variables and its inverse."""

    stack: TransformStack
    op: LinOp
    inv_op: LinOp

    def forward(self, u: SpectralField) -> SpectralField:
        return _wrap(self.stack, self.op.apply(u.coeffs))

    def inverse(self, u: SpectralField) -> SpectralField:
        return _wrap(self.stack, self.inv_op.apply(u.coeffs))


def assemble_theta(stack: TransformStack) -> Theta:
    return Theta(stack, stack.op("theta"), stack.op("theta_inv"))


# ---------------------------------------------------------------------------
# persistence and re-verification

_EXP_NAMES = ("e_pw", "e_pw_inv", "e_pwv", "e_pwv_inv", "e_pv2w", "e_pv2w_inv")


def save_stack(stack: TransformStack, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_enhanced(stack.data, d / "data")
    for name in _EXP_NAMES:
        write_pcf1(d / f"{name}.pcf", getattr(stack, name))
    with open(d / "stack_meta", "w") as fh:
        fh.write(f"M={stack.M}\n")
        fh.write(f"N={stack.N}\n")
        fh.write(f"cert_exp={stack.cert_exp_plus:.17g}\n")
        fh.write(f"cert_exp_minus={stack.cert_exp_minus:.17g}\n")
        for s in stack.sigma_list:
            fh.write(f"cert_ups_{s:g}={stack.cert_upsilon[s]:.17g}\n")
        fh.write(f"cert_phi={stack.cert_phi:.17g}\n")
        fh.write(f"probe_seed={stack.probe_seed}\n")
        fh.write(f"power_iters={stack.power_iters}\n")
        fh.write(f"restarts={stack.restarts}\n")
        fh.write(f"sigma_list={','.join('%g' % s for s in stack.sigma_list)}\n")


def load_stack(directory) -> TransformStack:
    d = Path(directory)
    meta = read_meta(d / "stack_meta")
    data = load_enhanced(d / "data")
    partition = DyadicPartition(data.grid)
    sigma_list = tuple(float(s) for s in meta["sigma_list"].split(","))
    stack = build_stack(
        data, partition, int(meta["M"]), int(meta["N"]), sigma_list,
        int(meta["probe_seed"]), int(meta["power_iters"]), int(meta["restarts"]),
    )
    return stack


def verify_stack(directory) -> dict:
    """Rebuild the persisted stack and re-check every certificate bit-exactly.

    Returns the comparison table; raises CertificateError on any mismatch
    or if a certificate is out of bounds."""
    d = Path(directory)
    meta = read_meta(d / "stack_meta")
    stack = load_stack(d)
    stored = {
        "cert_exp": float(meta["cert_exp"]),
        "cert_exp_minus": float(meta["cert_exp_minus"]),
        "cert_phi": float(meta["cert_phi"]),
    }
    recomputed = {
        "cert_exp": stack.cert_exp_plus,
        "cert_exp_minus": stack.cert_exp_minus,
        "cert_phi": stack.cert_phi,
    }
    for s in stack.sigma_list:
        stored[f"cert_ups_{s:g}"] = float(meta[f"cert_ups_{s:g}"])
        recomputed[f"cert_ups_{s:g}"] = stack.cert_upsilon[s]
    for key, value in stored.items():
        if recomputed[key] != value:
            raise CertificateError(
                f"certificate {key} mismatch: stored {value:.17g}, "
                f"recomputed {recomputed[key]:.17g}"
            )
    for name in _EXP_NAMES:
        disk = read_pcf1(d / f"{name}.pcf")
        if not np.array_equal(disk.coeffs, getattr(stack, name).coeffs):
            raise CertificateError(f"cached exponential {name} mismatch")
    if stack.cert_exp_plus > EXP_SMALLNESS or stack.cert_exp_minus > EXP_SMALLNESS:
        raise CertificateError("exponential smallness certificate violated")
    if stack.cert_phi > OPERATOR_SMALLNESS:
        raise CertificateError("paracontrolled smallness certificate violated")
    if max(stack.cert_upsilon.values()) > OPERATOR_SMALLNESS:
        raise CertificateError("parametrix norm certificate violated")
    return {"stored": stored, "recomputed": recomputed, "M": stack.M, "N": stack.N}
