"""Closed-form spectral-gap and variance bounds with precondition checks.

Calculators never clamp. A report whose preconditions fail, or whose
gap-type value leaves [0, 1], is returned with ``applicable=False``.
Inequality preconditions allow a relative slack of PRECOND_RTOL so that
boundary cases such as h = 1/sqrt(10) are not lost to rounding.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ConfigError, UsageError

C0 = 1.0 / (102400.0 * math.pi)
PRECOND_RTOL = 1e-12
EPS_FLOOR = 0.1  # lower bound on epsilon proved in the small-step regime
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class BoundReport:
    formula_id: str
    value: float
    inputs: dict
    preconditions: tuple  # ((name, satisfied), ...)
    applicable: bool
    details: dict = field(default_factory=dict)

    def failed(self):
        return [name for name, ok in self.preconditions if not ok]


def _le(a, b):
    return a <= b + PRECOND_RTOL * max(abs(a), abs(b))


def _clean(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, (list, tuple)):
            v = [x.item() if isinstance(x, (np.floating, np.integer)) else x for x in v]
        out[k] = v
    return out


def _report(fid, value, inputs, preconds, details=None, gap_type=True):
    preconds = list(preconds)
    value = float(value)
    if gap_type and math.isfinite(value) and all(ok for _, ok in preconds):
        preconds.append(("value_in_unit_interval", 0.0 <= value <= 1.0))
    if not math.isfinite(value):
        preconds.append(("value_defined", False))
    ok = all(bool(f) for _, f in preconds)
    return BoundReport(fid, value, _clean(inputs), tuple((n, bool(f)) for n, f in preconds),
                       ok, _clean(details or {}))


def _check_lambda(lam, name="lambda0"):
    if not (0.0 <= lam < 1.0):
        raise UsageError(f"{name} must lie in [0, 1), got {lam}")


def _check_d(d):
    if int(d) != d or d < 1:
        raise UsageError(f"d must be a positive integer, got {d}")


# --- Gaussian random-scan Gibbs gap --------------------------------------------

def rsg_psi_max(t):
    """Largest eigenvalue of I - DQ, via the symmetric form D^{1/2} Q D^{1/2}."""
    Dh = np.zeros_like(t.Q)
    for j in range(t.d):
        sl = t.blocks.slice(j)
        Dh[sl, sl] = linalg.sym_sqrt(t.cache[j].Qjj, inverse=True)
    M = Dh @ t.Q @ Dh
    w = linalg.eigen_sym(0.5 * (M + M.T)).values
    return 1.0 - float(w[-1])


def gap_rsg_gaussian(t):
    """Random-scan Gibbs gap (1 - psi_max(I - DQ)) / d."""
    psi = rsg_psi_max(t)
    return _report("gaussian_rsg_gap", (1.0 - psi) / t.d, {"N": t.N, "d": t.d},
                   [("Q_spd", True)], {"psi_max": psi})


def dq_infinity_norm(t):
    """Max absolute row sum of I - DQ (a cheap upper bound on psi_max)."""
    return float(np.max(np.sum(np.abs(np.eye(t.N) - t.D @ t.Q), axis=1)))


# --- block MALA contraction ------------------------------------------------------

def recommended_step_size(t, j):
    """h_j = 1 / (sqrt(10 N_j) psi_max(Q_jj)); always meets both step conditions."""
    return 1.0 / (math.sqrt(10.0 * t.blocks.sizes[j]) * t.cache[j].psi_max)


def lambda_mala_block(t, cfg, j):
    """Upper bound 1 - c0 h_j psi_min(Q_jj) on ||K_j - P_j|| for block MALA."""
    t.blocks.check_index(j)
    c = t.cache[j]
    h = cfg.step_sizes[j]
    if not h > 0:
        raise UsageError("step size must be positive")
    one_minus = C0 * h * c.psi_min
    pre = [("h_le_half_inv_psi_max", _le(2.0 * h * c.psi_max, 1.0)),
           ("h_sq_trace_le_tenth", _le(10.0 * h * h * c.trace_sq, 1.0))]
    return _report("mala_block_contraction", 1.0 - one_minus,
                   {"block": j, "h": h, "psi_min": c.psi_min, "psi_max": c.psi_max,
                    "trace_sq": c.trace_sq},
                   pre, {"one_minus_lambda": one_minus, "c0": C0})


# --- scan comparison bounds ----------------------------------------------------

def _dcw_from_rcw_value(eta, om, d):
    # om = 1 - lambda0
    return om * om / (8.0 * (d + 1) * (2.0 - om)) * eta


def gap_dcw_from_rcw(eta_rcw, lambda0, d):
    """Deterministic-scan gap >= (1-l)^2 / (8(d+1)(1+l)) * random-scan gap."""
    if not (0.0 < eta_rcw <= 1.0):
        raise UsageError(f"eta_rcw must lie in (0, 1], got {eta_rcw}")
    _check_lambda(lambda0)
    _check_d(d)
    return _report("dcw_from_rcw", _dcw_from_rcw_value(eta_rcw, 1.0 - lambda0, d),
                   {"eta_rcw": eta_rcw, "lambda0": lambda0, "d": d}, [("domain", True)])


def gap_dcw_from_rsg(eta_rsg, lambdas, d=None, method="composed"):
    """Deterministic-scan gap from the random-scan Gibbs gap.

    composed: (1-l0)^3 / (8(d+1)(1+l0)) * eta
    direct:    (1-l0) / (2(1+l0)) * min_j (1-l_j)^2 / j * (1 - sqrt(1-eta))^2
    with j the 1-based position in the sweep and l0 = max_j l_j.
    """
    lams = [float(v) for v in np.atleast_1d(lambdas)]
    if d is None:
        d = len(lams)
    _check_d(d)
    if len(lams) == 1 and d > 1:
        lams = lams * d
    if len(lams) != d:
        raise UsageError(f"{len(lams)} block contractions for d={d}")
    for v in lams:
        _check_lambda(v, "lambda_j")
    if not (0.0 <= eta_rsg <= 1.0):
        raise UsageError(f"eta_rsg must lie in [0, 1], got {eta_rsg}")
    l0 = max(lams)
    pre = [("eta_rsg_positive", eta_rsg > 0)]
    if method == "composed":
        om = 1.0 - l0
        val = om ** 3 / (8.0 * (d + 1) * (1.0 + l0)) * eta_rsg
        fid = "dcw_from_rsg_composed"
    elif method == "direct":
        m = min((1.0 - lj) ** 2 / (i + 1) for i, lj in enumerate(lams))
        val = (1.0 - l0) / (2.0 * (1.0 + l0)) * m * (1.0 - math.sqrt(1.0 - eta_rsg)) ** 2
        fid = "dcw_from_rsg_direct"
    else:
        raise UsageError(f"unknown method {method!r}")
    return _report(fid, val, {"eta_rsg": eta_rsg, "lambdas": lams, "d": d}, pre,
                   {"method": method, "lambda0": l0})


def default_c_rcw(d, case="all"):
    """Midpoint of the admissible open interval of constants."""
    if case == "all":
        return 1.0 / 32.0
    if case == "one":
        return (1.0 - math.exp(4.0) / d ** 2) / 8.0
    raise UsageError(f"unknown case {case!r}")


def gap_rcw_from_dcw(eta_dcw, lambda0, d, case="all", c_rcw=None):
    """Random-scan gap from a deterministic-scan gap (natural logarithms).

    case "all": every sweep order has the gap, d >= 2, denominator d^2 ln^2 d.
    case "one": a single order has it, d >= 8, denominator d^4 ln^2 d.
    """
    if not (0.0 < eta_dcw <= 1.0):
        raise UsageError(f"eta_dcw must lie in (0, 1], got {eta_dcw}")
    _check_lambda(lambda0)
    _check_d(d)
    is_default = c_rcw is None
    c = default_c_rcw(d, case) if is_default else float(c_rcw)
    if case == "all":
        hi, power, dmin = 1.0 / 16.0, 2, 2
    else:
        hi, power, dmin = (1.0 - math.exp(4.0) / d ** 2) / 4.0, 4, 8
    log_d = math.log(d)
    pre = [(f"d_ge_{dmin}", d >= dmin), ("c_rcw_in_interval", 0.0 < c < hi)]
    if log_d > 0:
        val = c * (1.0 - lambda0) / (1.0 + lambda0) * eta_dcw / (d ** power * log_d ** 2)
    else:
        val = math.nan
    return _report(f"rcw_from_dcw_{case}", val,
                   {"eta_dcw": eta_dcw, "lambda0": lambda0, "d": d, "case": case},
                   pre, {"c_rcw": c, "c_rcw_is_default": is_default, "c_rcw_upper": hi})


def weighted_rcw_lower(eta_rcw, weights):
    """Gap of the weighted random scan >= d * min(w) * uniform random-scan gap."""
    w = np.asarray(weights, dtype=float)
    return len(w) * float(w.min()) * eta_rcw


def sandwich_rcw_rsg(gap_rsg, lambda0, weights=None):
    """(lower, upper) = ((1-l0) gap_rsg, (1+l0) gap_rsg) for the random-scan
    component-wise gap. With weights, the lower report also carries the
    weighted-scan lower bound d * w_min * lower."""
    pre = [("gap_rsg_in_unit_interval", 0.0 <= gap_rsg <= 1.0),
           ("lambda0_in_[0,1)", 0.0 <= lambda0 < 1.0)]
    inputs = {"gap_rsg": gap_rsg, "lambda0": lambda0}
    details = {}
    if weights is not None:
        inputs["weights"] = [float(v) for v in weights]
        details["weighted_lower"] = weighted_rcw_lower((1.0 - lambda0) * gap_rsg, weights)
    lo = _report("rcw_sandwich_lower", (1.0 - lambda0) * gap_rsg, inputs, pre, details)
    hi = _report("rcw_sandwich_upper", (1.0 + lambda0) * gap_rsg, inputs, pre)
    return lo, hi


def gap_product_containing_sweep(eta_dcw, lambda0, d, L):
    """Gap of a length-L product of block kernels containing a full sweep
    as a subsequence: (1-l0) eta / (2 (L-d+1) (1+l0))."""
    _check_d(d)
    if L < d:
        raise UsageError(f"product length L={L} is shorter than d={d}")
    _check_lambda(lambda0)
    val = (1.0 - lambda0) * eta_dcw / (2.0 * (L - d + 1) * (1.0 + lambda0))
    return _report("product_with_sweep", val,
                   {"eta_dcw": eta_dcw, "lambda0": lambda0, "d": d, "L": L},
                   [("eta_dcw_in_unit_interval", 0.0 <= eta_dcw <= 1.0)])


def variance_gap_bound(eta_rcw, eta_dcw, f_norm_sq):
    """|sigma^2_DCW(f) - sigma^2_{RCW^d}(f)| <= 4 ||f||^2 / (eta_rcw eta_dcw)."""
    if f_norm_sq < 0:
        raise UsageError("f_norm_sq must be nonnegative")
    pre = [("eta_rcw_positive", 0.0 < eta_rcw <= 1.0), ("eta_dcw_positive", 0.0 < eta_dcw <= 1.0)]
    val = 4.0 * f_norm_sq / (eta_rcw * eta_dcw) if eta_rcw > 0 and eta_dcw > 0 else math.nan
    return _report("variance_gap", val,
                   {"eta_rcw": eta_rcw, "eta_dcw": eta_dcw, "f_norm_sq": f_norm_sq},
                   pre, gap_type=False)


def gaussian_mala_dcw_bound(t, cfg):
    """Deterministic-scan block-MALA gap lower bound for a Gaussian target:
    block contractions, the random-scan Gibbs gap, and the composed formula."""
    cfg.check_target(t)
    blocks = [lambda_mala_block(t, cfg, j) for j in range(t.d)]
    rsg = gap_rsg_gaussian(t)
    pre = []
    for j, r in enumerate(blocks):
        for name, ok in r.preconditions:
            if name != "value_in_unit_interval":
                pre.append((f"block_{j}:{name}", ok))
    om = min(r.details["one_minus_lambda"] for r in blocks)
    l0 = 1.0 - om
    d = t.d
    val = om ** 3 / (8.0 * (d + 1) * (2.0 - om)) * rsg.value
    bad = [j for j, r in enumerate(blocks) if not r.applicable]
    return _report("gaussian_mala_dcw", val, {"N": t.N, "d": d, "step_sizes": list(cfg.step_sizes)},
                   pre, {"lambda0": l0, "one_minus_lambda0": om, "eta_rsg": rsg.value,
                         "psi_max": rsg.details["psi_max"], "inapplicable_blocks": bad,
                         "lambdas": [r.value for r in blocks]})


# --- structured targets --------------------------------------------------------

def structured_target_report(kind, N, s, d, param, blocks=None):
    """Closed-form step size, psi_max, contraction and final gap for
    compound-symmetry (param = zeta) or AR(1) (param = phi) targets with d
    equal blocks of size s."""
    N, s, d = int(N), int(s), int(d)
    if blocks is not None and len(set(int(b) for b in blocks)) > 1:
        raise ConfigError("structured calculators need equal block sizes")
    if N != s * d or s < 1:
        raise ConfigError(f"need N = s*d, got N={N}, s={s}, d={d}")
    if kind == "cs":
        z = float(param)
        if not (0.0 <= z < 1.0):
            raise ConfigError(f"zeta must lie in [0, 1), got {z}")
        h = (1.0 - z) / math.sqrt(10.0 * s)
        a = 1.0 + (N - s - 1) * z
        b = 1.0 + (N - 1) * z
        psi = (N - s) * z / a
        psi_min_block = a / ((1.0 - z) * b)
        om = C0 * h * psi_min_block
        gap = C0 ** 3 * (1.0 - z) / (2 ** 9 * N * math.sqrt(s) * (d + 1)) * a * a / b ** 3
        pre = [("d_ge_2", d >= 2)]
        key = "psi_max"
    elif kind == "ar1":
        p = abs(float(param))
        if not p < 1.0:
            raise ConfigError(f"|phi| must be < 1, got {param}")
        h = (1.0 - p) / ((1.0 + p) * math.sqrt(10.0 * s))
        psi = (p + p ** s) / (1.0 + p ** (s + 1))
        psi_min_block = (1.0 - p) / (1.0 + p)
        om = C0 * h * psi_min_block
        gap = (C0 ** 3 / (2 ** 9 * N * math.sqrt(s) * (d + 1))
               * (1.0 - p) ** 7 * (1.0 - p ** s) / ((1.0 + p) ** 6 * (1.0 + p ** (s + 1))))
        pre = [("d_ge_1", d >= 1)]
        key = "psi_max_bound"
    else:
        raise ConfigError(f"unknown structured kind {kind!r}")
    eta = (1.0 - psi) / d
    composed = om ** 3 / (8.0 * (d + 1) * (2.0 - om)) * eta
    return _report(f"{kind}_structured", gap, {"kind": kind, "N": N, "s": s, "d": d, "param": float(param)},
                   pre, {"step_size": h, key: psi, "eta_rsg": eta, "lambda0_bound": 1.0 - om,
                         "one_minus_lambda0": om, "gap_composed": composed})


# --- conductance chain behind c0 -----------------------------------------------

@dataclass(frozen=True)
class ConductanceConstants:
    eta: float
    t: float
    epsilon: float
    kappa: float
    a_star: float
    conductance_lb: float
    two_step_gap_lb: float
    one_step_gap_lb: float
    c0: float
    applicable: bool
    preconditions: tuple


def std_normal_cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


def std_normal_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def c0_constants(delta, eta=0.25, a=1.0 / math.sqrt(2.0)):
    """Constants of the conductance argument for M_Delta.

    ``delta`` is an SPD matrix or its eigenvalues. epsilon is reported as
    computed; the conductance chain then uses the proved floor 1/10, which
    gives one-step gap >= psi_min(Delta) / (102400 pi) in the regime
    delta_max <= 1/2, tr(Delta^2) <= 1/10.
    """
    dv = np.asarray(delta, dtype=float)
    w = linalg.eigen_sym(dv).values if dv.ndim == 2 else np.sort(np.atleast_1d(dv))[::-1]
    if not np.all(w > 0):
        raise UsageError("Delta must be positive definite")
    dmax, dmin = float(w[0]), float(w[-1])
    tr = float(np.sum(w * w))
    norm_i_minus = float(np.max(np.abs(1.0 - w)))
    pre = [("delta_max_le_half", dmax <= 0.5), ("trace_sq_le_tenth", tr <= 0.1)]
    if dmax < 1.0:
        eps = (2.0 / (1.0 + dmax)) * math.exp(-tr / (2.0 * (1.0 - dmax))) \
            - 2.0 * std_normal_cdf(norm_i_minus * eta / 2.0)
    else:
        eps = math.nan
    kappa = 4.0 * math.sqrt(dmin) / math.sqrt(2.0 * math.pi)
    tt = eta * _SQRT2
    pre.append(("epsilon_ge_floor", eps >= EPS_FLOOR))
    phi = EPS_FLOOR * min((1.0 - a) / 2.0, a * a * kappa * tt / 4.0)
    two = phi * phi / 8.0
    one = two / 2.0
    return ConductanceConstants(eta, tt, eps, kappa, a, phi, two, one, C0,
                                all(ok for _, ok in pre), tuple(pre))


def density_inequality_margin(xs):
    """min over xs of phi(x) - (4/sqrt(2 pi)) Phi(x)(1 - Phi(x))."""
    k = 4.0 / math.sqrt(2.0 * math.pi)
    return min(std_normal_pdf(x) - k * std_normal_cdf(x) * (1.0 - std_normal_cdf(x)) for x in xs)


def block_coupling_norms(t):
    """Spectral norms of the off-diagonal blocks Q_jj^{-1} Q_jk of DQ."""
    out = {}
    for j in range(t.d):
        for k in range(t.d):
            if j != k:
                sj, sk = t.blocks.slice(j), t.blocks.slice(k)
                out[(j, k)] = linalg.two_norm(t.cache[j].inv @ t.Q[sj, sk])
    return out
