"""Candidate universe: models, controllers, all closed loops, derived constants.

Indices are 0-based throughout. ``closed_loops[i][j]`` is controller ``j``
applied to model ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import numerics as nx
from .errors import DegenerateInputError, DimensionError, InvalidScenarioError

DEFAULT_DELTA_C = 1.0 / 30.0


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete-time triple ``x+ = A x + B u``, ``y = C x``."""

    C: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = nx.as_square(self.A, "A")
        C = nx.as_matrix(self.C, "C")
        B = nx.as_matrix(self.B, "B")
        n = A.shape[0]
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns but A is {n}x{n}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows but A is {n}x{n}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Controller:
    """Linear output-feedback law.

    Static: ``u = D_K y``. Dynamic: ``xk+ = A_K xk + B_K y``,
    ``u = C_K xk + D_K y``.
    """

    kind: str
    D_K: np.ndarray
    A_K: np.ndarray | None = None
    B_K: np.ndarray | None = None
    C_K: np.ndarray | None = None

    def __post_init__(self):
        D = nx.as_matrix(self.D_K, "D_K")
        object.__setattr__(self, "D_K", D)
        if self.kind == "static_output_feedback":
            if any(m is not None for m in (self.A_K, self.B_K, self.C_K)):
                raise DimensionError("static controller must not carry A_K, B_K, C_K")
        elif self.kind == "dynamic":
            if any(m is None for m in (self.A_K, self.B_K, self.C_K)):
                raise DimensionError("dynamic controller requires A_K, B_K, C_K")
            AK = nx.as_square(self.A_K, "A_K")
            BK = nx.as_matrix(self.B_K, "B_K")
            CK = nx.as_matrix(self.C_K, "C_K")
            k = AK.shape[0]
            if k < 1:
                raise DimensionError("dynamic controller needs at least one state")
            if BK.shape != (k, D.shape[1]):
                raise DimensionError(f"B_K must be {k}x{D.shape[1]}, got {BK.shape}")
            if CK.shape != (D.shape[0], k):
                raise DimensionError(f"C_K must be {D.shape[0]}x{k}, got {CK.shape}")
            object.__setattr__(self, "A_K", AK)
            object.__setattr__(self, "B_K", BK)
            object.__setattr__(self, "C_K", CK)
        else:
            raise ValueError(f"unknown controller kind {self.kind!r}")

    @classmethod
    def static(cls, D_K) -> "Controller":
        return cls("static_output_feedback", D_K)

    @classmethod
    def dynamic(cls, A_K, B_K, C_K, D_K) -> "Controller":
        return cls("dynamic", D_K, A_K, B_K, C_K)

    @property
    def order(self) -> int:
        return 0 if self.A_K is None else self.A_K.shape[0]


@dataclass(frozen=True)
class ClosedLoop:
    model: StateSpaceModel
    plant_dim: int
    controller_dim: int

    @property
    def C(self):
        return self.model.C

    @property
    def A(self):
        return self.model.A

    @property
    def B(self):
        return self.model.B


def build_closed_loop(plant: StateSpaceModel, ctrl: Controller) -> ClosedLoop:
    """Interconnect ``plant`` with ``ctrl``; the exploratory input enters the plant channel.

    The augmented state is ``[x_plant; x_controller]``.
    """
    d_u, d_y = ctrl.D_K.shape
    if d_u != plant.n_inputs or d_y != plant.n_outputs:
        raise DimensionError(
            f"controller maps {d_y} outputs to {d_u} inputs; plant has "
            f"{plant.n_outputs} outputs and {plant.n_inputs} inputs"
        )
    A, B, C = plant.A, plant.B, plant.C
    n = plant.n_states
    A_top = A + B @ ctrl.D_K @ C
    if ctrl.order == 0:
        return ClosedLoop(StateSpaceModel(C.copy(), A_top, B.copy()), n, 0)
    k = ctrl.order
    A_cl = np.block([[A_top, B @ ctrl.C_K], [ctrl.B_K @ C, ctrl.A_K]])
    B_cl = np.vstack([B, np.zeros((k, plant.n_inputs))])
    C_cl = np.hstack([C, np.zeros((plant.n_outputs, k))])
    return ClosedLoop(StateSpaceModel(C_cl, A_cl, B_cl), n, k)


def _as_model(sys) -> StateSpaceModel:
    return sys.model if isinstance(sys, ClosedLoop) else sys


def observability_matrix(cl, nu: int) -> np.ndarray:
    """Stack ``[C A^{nu-1}; ...; C A; C]`` (highest power on top)."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    m = _as_model(cl)
    blocks = []
    row = m.C
    for _ in range(nu):
        blocks.append(row)
        row = row @ m.A
    return np.vstack(blocks[::-1])


def strict_observability_margin(cl, nu: int) -> float:
    return nx.min_singular_value(observability_matrix(cl, nu))


def markov_parameters(cl, h: int) -> np.ndarray:
    """Block row ``[C A^{h-1} B, ..., C A B, C B]`` (highest power leftmost)."""
    if h < 1:
        raise ValueError("h must be >= 1")
    m = _as_model(cl)
    blocks = []
    col = m.B
    for _ in range(h):
        blocks.append(m.C @ col)
        col = m.A @ col
    return np.hstack(blocks[::-1])


class NoiseLevels(NamedTuple):
    sigma_w: float
    sigma_eta: float
    sigma_u: float


@dataclass(frozen=True)
class DerivedConstants:
    """Every scenario-level constant used by the criteria and the supervisor.

    ``T1``, ``T2`` and ``tau`` are ``math.inf`` when the formula has no finite
    value (zero excitation or zero process noise).
    """

    eps_c: float
    eps_a: float
    gamma: float
    zeta: float
    theta: float
    sigma_r_sq: float
    nu: int
    h: int
    T1: float
    T2: float
    tau: float
    critical_directions: list
    unstable_directions: list | None
    R1: float
    R2: float
    delta_c: float = DEFAULT_DELTA_C
    dim_free: bool = False


@dataclass(frozen=True)
class CandidateBank:
    models: tuple
    controllers: tuple
    closed_loops: tuple
    true_index: int
    noise: NoiseLevels
    constants: DerivedConstants | None = None

    @property
    def N(self) -> int:
        return len(self.models)

    @property
    def candidates(self):
        return list(zip(self.models, self.controllers))

    @property
    def d_y(self) -> int:
        return self.models[0].n_outputs

    @property
    def d_u(self) -> int:
        return self.models[0].n_inputs

    def loop(self, i: int, j: int) -> ClosedLoop:
        return self.closed_loops[i][j]

    def with_constants(self, constants: DerivedConstants) -> "CandidateBank":
        return replace(self, constants=constants)


def make_bank(
    models: Sequence[StateSpaceModel],
    controllers: Sequence[Controller],
    true_index: int,
    noise: NoiseLevels | tuple = (1.0, 1.0, 1.0),
) -> CandidateBank:
    """Precompute all ``N^2`` closed loops."""
    if len(models) < 1 or len(models) != len(controllers):
        raise DimensionError("need N >= 1 models and exactly one controller per model")
    d_u, d_y = models[0].n_inputs, models[0].n_outputs
    for idx, m in enumerate(models):
        if (m.n_inputs, m.n_outputs) != (d_u, d_y):
            raise DimensionError(f"candidate {idx}: (d_u, d_y) differs from candidate 0")
    if not 0 <= true_index < len(models):
        raise ValueError(f"true_index {true_index} out of range")
    grid = tuple(
        tuple(build_closed_loop(m, k) for k in controllers) for m in models
    )
    return CandidateBank(tuple(models), tuple(controllers), grid, int(true_index),
                         NoiseLevels(*map(float, noise)))


def markov_separation(bank: CandidateBank, h: int) -> float:
    """Minimum over ``j`` and ``i != i'`` of ``||G[i,j] - G[i',j]||``; ``inf`` when N = 1."""
    N = bank.N
    best = math.inf
    for j in range(N):
        Gs = [markov_parameters(bank.loop(i, j), h) for i in range(N)]
        for i in range(N):
            for ip in range(i + 1, N):
                best = min(best, nx.max_singular_value(Gs[i] - Gs[ip]))
    return best


def critical_directions(bank: CandidateBank, j: int, h: int) -> list:
    """Unit pairs ``(u_k, v_k)`` aligned with ``G[k,j] - G[j,j]``; zero pair for ``k == j``."""
    G_jj = markov_parameters(bank.loop(j, j), h)
    out = []
    for k in range(bank.N):
        if k == j:
            out.append((np.zeros(G_jj.shape[0]), np.zeros(G_jj.shape[1])))
            continue
        try:
            _, u, v = nx.leading_singular_triple(markov_parameters(bank.loop(k, j), h) - G_jj)
        except DegenerateInputError:
            u, v = np.zeros(G_jj.shape[0]), np.zeros(G_jj.shape[1])
        out.append((u, v))
    return out


def unstable_mode_directions(bank: CandidateBank, j: int, tau: int, nu: int) -> list:
    """Left leading singular vectors of ``C (A / |lambda|)^{tau-nu-2}`` for unstable loops ``[i, j]``.

    Stable loops get the zero vector.
    """
    if tau <= nu + 2:
        raise ValueError("tau must exceed nu + 2")
    out = []
    for i in range(bank.N):
        cl = bank.loop(i, j)
        lam = nx.spectral_radius(cl.A)
        if lam < 1.0:
            out.append(np.zeros(bank.d_y))
            continue
        M = cl.C @ nx.matrix_power(cl.A / lam, tau - nu - 2)
        try:
            _, u, _ = nx.leading_singular_triple(M)
        except DegenerateInputError:
            u = np.zeros(bank.d_y)
        out.append(u)
    return out


def threshold_theta(zeta: float, eps_c: float, sigma_w: float, sigma_u: float,
                    sigma_eta: float) -> float:
    """Sub-Gaussian proxy ``(1 + zeta/eps_c)(zeta sw^2 + zeta su^2 + se^2)``.

    The identical expression serves as the residual variance proxy of the
    identification criterion.
    """
    return (1.0 + zeta / eps_c) * (zeta * sigma_w**2 + zeta * sigma_u**2 + sigma_eta**2)


def detection_length(nu: int, theta: float, delta_c: float, eps_a: float, eps_c: float,
                     sigma_w: float, d_y: int = 1, N: int | None = None,
                     dim_free: bool = False) -> float:
    """Episode length needed by instability detection (ceiling applied).

    Standard form uses ``d_y`` in both places; the dimension-free form uses a
    unit dimension and ``log(2N/delta_c)``.
    """
    if math.isinf(eps_a):
        return float(2 + 2 * nu)
    if sigma_w <= 0:
        return math.inf
    if dim_free:
        if N is None:
            raise ValueError("dimension-free length needs N")
        dim, log_arg = 1, 2.0 * N / delta_c
    else:
        dim, log_arg = d_y, 2.0 * d_y / delta_c
    level = 4.0 * math.sqrt(2.0 * dim * theta * math.log(log_arg))
    value = 2 + 2 * nu + math.log(level / (eps_a * eps_c * sigma_w)) / math.log1p(eps_a)
    return float(math.ceil(value))


def identification_length(nu: int, h: int, sigma_r_sq: float, sigma_u: float, gamma: float,
                          N: int, delta_c: float) -> float:
    """Episode length needed by the identification criterion (ceiling applied)."""
    first = 16.0 * math.log(4.0 * N / delta_c)
    if math.isinf(gamma):
        return float(math.ceil(nu + h + first))
    if sigma_u <= 0:
        return math.inf
    ratio = sigma_r_sq / (sigma_u**2 * gamma**2)
    value = nu + h + max(first, 2.0 * ratio, 8.0 * ratio * math.log(800.0 * N**2 / delta_c**2))
    return float(math.ceil(value))


def _is_valid_probability(p: float) -> bool:
    return 0.0 < p < 1.0


def derive_constants(bank: CandidateBank, nu: int, h: int, delta_c: float = DEFAULT_DELTA_C,
                     delta_alg: float = 0.1, dim_free: bool = False,
                     zeta_scope: str = "matched") -> DerivedConstants:
    """Compute margins, thresholds, episode lengths and precomputed directions.

    ``zeta_scope="all_stable"`` widens the H-infinity maximum to every stable
    loop instead of only the matched ones.

    Raises
    ------
    InvalidScenarioError
        If a matched loop is unstable or the Markov separation is zero.
    """
    if not (_is_valid_probability(delta_c) and _is_valid_probability(delta_alg)):
        raise ValueError("delta_c and delta_alg must lie in (0, 1)")
    if zeta_scope not in ("matched", "all_stable"):
        raise ValueError(f"unknown zeta_scope {zeta_scope!r}")
    N = bank.N
    rhos = np.array([[nx.spectral_radius(bank.loop(i, j).A) for j in range(N)]
                     for i in range(N)])
    for i in range(N):
        if rhos[i, i] >= 1.0:
            raise InvalidScenarioError(f"matched loop [{i},{i}] is unstable (rho={rhos[i, i]:.6g})")

    zeta_loops = [(i, i) for i in range(N)]
    if zeta_scope == "all_stable":
        zeta_loops = [(i, j) for i in range(N) for j in range(N) if rhos[i, j] < 1.0]
    zeta = 0.0
    for i, j in zeta_loops:
        cl = bank.loop(i, j)
        zeta = max(zeta, nx.hinf_norm(cl.C, cl.A), nx.hinf_norm(cl.C, cl.A, cl.B))

    eps_c = min(strict_observability_margin(bank.loop(i, i), nu) for i in range(N))
    if eps_c <= 0:
        raise InvalidScenarioError("a matched loop is not strictly observable with the given nu")
    unstable = rhos[rhos >= 1.0]
    eps_a = float(unstable.min() - 1.0) if unstable.size else math.inf
    gamma = markov_separation(bank, h)
    if gamma <= 0:
        raise InvalidScenarioError("Markov separation is zero: two candidate loops coincide")

    sw, se, su = bank.noise.sigma_w, bank.noise.sigma_eta, bank.noise.sigma_u
    theta = threshold_theta(zeta, eps_c, sw, su, se)
    sigma_r_sq = threshold_theta(zeta, eps_c, sw, su, se)
    if eps_a == 0.0:
        T1 = math.inf
    else:
        T1 = detection_length(nu, theta, delta_c, eps_a, eps_c, sw, d_y=bank.d_y, N=N,
                              dim_free=dim_free)
    T2 = identification_length(nu, h, sigma_r_sq, su, gamma, N, delta_c)
    tau = max(T1, T2)

    crit = [critical_directions(bank, j, h) for j in range(N)]
    unstable_dirs = None
    if math.isfinite(tau) and tau > nu + 2:
        unstable_dirs = [unstable_mode_directions(bank, j, int(tau), nu) for j in range(N)]

    R1 = max(nx.max_singular_value(bank.loop(i, j).A) for i in range(N) for j in range(N))
    R2 = max(nx.max_singular_value(bank.loop(i, j).B) for i in range(N) for j in range(N))
    return DerivedConstants(
        eps_c=float(eps_c), eps_a=eps_a, gamma=float(gamma), zeta=float(zeta),
        theta=float(theta), sigma_r_sq=float(sigma_r_sq), nu=int(nu), h=int(h),
        T1=T1, T2=T2, tau=tau, critical_directions=crit, unstable_directions=unstable_dirs,
        R1=float(R1), R2=float(R2), delta_c=float(delta_c), dim_free=bool(dim_free),
    )


@dataclass(frozen=True)
class Margins:
    """Declared assumption margins a scenario must meet."""

    eps_c: float | None = None
    eps_a: float | None = None
    gamma: float | None = None


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    measured: float
    required: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": _jsonable(self.measured),
                "required": _jsonable(self.required), "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"valid": self.valid, "checks": [c.to_dict() for c in self.checks]}

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            out.append(f"[{mark}] {c.name}: measured={c.measured:.6g} required={c.required:.6g}"
                       + (f" ({c.detail})" if c.detail else ""))
        return out


def _jsonable(x: float):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def validate_scenario(bank: CandidateBank, constants: DerivedConstants | None = None,
                      declared: Margins | None = None) -> ValidationReport:
    """Check the three standing assumptions and report measured margins.

    Loops whose spectral radius lies in ``[1, 1 + eps_a)`` are flagged
    invalid. Declared margins default to the measured ones.
    """
    declared = declared or Margins()
    N = bank.N
    nu = constants.nu if constants else 1
    h = constants.h if constants else 1
    report = ValidationReport()

    rhos = [[nx.spectral_radius(bank.loop(i, j).A) for j in range(N)] for i in range(N)]
    matched = max(rhos[i][i] for i in range(N))
    report.checks.append(AssumptionCheck(
        "matched loops stable", matched < 1.0, matched, 1.0, "max rho over matched loops"))

    eps_c = min(strict_observability_margin(bank.loop(i, i), nu) for i in range(N))
    need_c = declared.eps_c if declared.eps_c is not None else 0.0
    report.checks.append(AssumptionCheck(
        "strict observability", eps_c > 0 and eps_c >= need_c, eps_c, need_c,
        f"nu={nu}"))

    unstable = [rhos[i][j] for i in range(N) for j in range(N) if rhos[i][j] >= 1.0]
    measured_a = min(unstable) - 1.0 if unstable else math.inf
    need_a = declared.eps_a if declared.eps_a is not None else (
        measured_a if unstable else 0.0)
    boundary = [r for r in unstable if r < 1.0 + need_a or r - 1.0 <= 0.0]
    report.checks.append(AssumptionCheck(
        "explosiveness", not boundary, measured_a, need_a,
        f"{len(unstable)} unstable loops, {len(boundary)} inside [1, 1+eps_a)"))

    gamma = markov_separation(bank, h)
    need_g = declared.gamma if declared.gamma is not None else 0.0
    report.checks.append(AssumptionCheck(
        "Markov separation", gamma > 0 and gamma >= need_g, gamma, need_g, f"h={h}"))
    return report
