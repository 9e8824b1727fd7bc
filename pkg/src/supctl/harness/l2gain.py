"""Finite L2-gain constants and their check on recorded energies.

The transient constant grows like ``R1^(2 tau L)`` and overflows any float,
so it is carried as a natural logarithm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import numerics as nx
from ..system_bank import CandidateBank


@dataclass
class L2GainReport:
    R1: float
    R2: float
    T_prime: int
    kappa0: float
    kappa1: float
    log_C0: float
    C1: float
    transient_form: str
    state_energy: float
    input_energy_pre: float
    input_energy_post: float
    empirical_C0: float
    empirical_C1: float
    worst_log_margin: float
    bound_satisfied: bool

    @property
    def C0(self) -> float:
        return math.exp(self.log_C0) if self.log_C0 < 700 else math.inf

    def to_dict(self) -> dict:
        d = asdict(self)
        d["log10_C0"] = self.log_C0 / math.log(10.0)
        return {k: _finite(v) for k, v in d.items()}


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def kappa_constants(bank: CandidateBank) -> tuple[float, float]:
    """Lyapunov-certificate constants of the true matched loop."""
    cl = bank.loop(bank.true_index, bank.true_index)
    P = nx.dlyap(cl.A, np.eye(cl.A.shape[0]))
    lam = float(np.max(np.linalg.eigvalsh(P)))
    sb = nx.max_singular_value(cl.B)
    return lam, 2.0 * lam**2 * (1.0 + sb**2)


def transient_log_constant(kappa0: float, R1: float, R2: float, T_prime: int) -> tuple[float, str]:
    """``log C0`` and a label naming the transient bound used."""
    base = math.log(2.0 * kappa0)
    if R1 > 1.0:
        lr = math.log(R1)
        growth = max(2 * T_prime * lr, (2 * T_prime - 2) * lr + math.log(R2) if R2 > 0 else -math.inf)
        return base + growth - 2.0 * math.log(R1 - 1.0), "geometric R1>1"
    amp = math.log(max(1.0, R2))
    if R1 < 1.0:
        return base + amp - 2.0 * math.log(1.0 - R1), "contractive R1<1"
    return base + amp + 2.0 * math.log(T_prime), "marginal R1=1"


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def l2_gain_report(energy: dict, bank: CandidateBank, R1: float, R2: float, T_prime: int) -> L2GainReport:
    """Evaluate the gain inequality for every horizon ``T > T_prime`` in the record.

    ``energy`` holds ``state_pre`` and ``input_pre`` (sums through ``T_prime``)
    and per-step lists ``state_post`` and ``input_post`` after it.
    """
    k0, k1 = kappa_constants(bank)
    log_c0, form = transient_log_constant(k0, R1, R2, T_prime)
    x_pre, d_pre = float(energy["state_pre"]), float(energy["input_pre"])
    x_post = np.cumsum(np.asarray(energy["state_post"], dtype=float))
    d_post = np.cumsum(np.asarray(energy["input_post"], dtype=float))
    if x_post.size == 0:
        x_post, d_post = np.zeros(1), np.zeros(1)

    log_pre = log_c0 + _log(d_pre)
    worst = math.inf
    ok = True
    for xs, ds in zip(x_post, d_post):
        lhs = x_pre + float(xs)
        rhs = np.logaddexp(log_pre, _log(k1) + _log(float(ds)))
        if lhs <= 0.0:
            margin = math.inf
        elif rhs == -math.inf:
            margin = -math.inf
        else:
            margin = float(rhs) - math.log(lhs)
        worst = min(worst, margin)
        ok = ok and margin >= 0.0

    emp_c0 = x_pre / d_pre if d_pre > 0 else (0.0 if x_pre == 0 else math.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(d_post > 0, x_post / d_post, np.where(x_post > 0, np.inf, 0.0))
    emp_c1 = float(np.max(ratios))
    return L2GainReport(
        R1=R1, R2=R2, T_prime=int(T_prime), kappa0=k0, kappa1=k1, log_C0=log_c0, C1=k1,
        transient_form=form, state_energy=x_pre + float(x_post[-1]), input_energy_pre=d_pre,
        input_energy_post=float(d_post[-1]), empirical_C0=emp_c0, empirical_C1=emp_c1,
        worst_log_margin=worst, bound_satisfied=ok,
    )
