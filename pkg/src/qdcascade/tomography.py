"""Two-qubit state tomography and entanglement measures.

States live in the time-bin basis (|ee>, |el>, |le>, |ll>); the first qubit is
the biexciton photon, the second the exciton photon. Each of the sixteen
measurement settings projects both photons on one of four single-qubit states
and is modelled as a binomial experiment with a known number of trials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import minimize

from .csvio import fmt, table_text
from .errors import ConfigurationError, ConvergenceError, DomainError
from .linalg import check_density_matrix, ket_projector, project_psd
from .parallel import map_ordered, substream

BASIS_LABELS = ("ee", "el", "le", "ll")
_S = 1 / math.sqrt(2)
PROJECTORS = {
    "e": np.array([1, 0], dtype=complex),
    "l": np.array([0, 1], dtype=complex),
    "e+l": np.array([_S, _S], dtype=complex),
    "e+il": np.array([_S, 1j * _S], dtype=complex),
}
_TAG_COUNTS, _TAG_BOOT = 6, 7
_PROB_FLOOR = 1e-15

_Y = np.array([[0, -1j], [1j, 0]])
_YY = np.kron(_Y, _Y)


@dataclass(frozen=True)
class TwoQubitState:
    """Validated 4x4 density matrix in the (ee, el, le, ll) basis."""
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", check_density_matrix(self.matrix, dim=4))

    def to_text(self) -> str:
        return state_to_text(self.matrix)


def _matrix(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, TwoQubitState) else np.asarray(rho, dtype=complex)


def bell_state(phi: float = 0.0) -> TwoQubitState:
    """(|ee> + e^{i phi}|ll>)/sqrt(2)."""
    psi = np.zeros(4, dtype=complex)
    psi[0], psi[3] = _S, _S * np.exp(1j * phi)
    return TwoQubitState(ket_projector(psi))


MAXIMALLY_MIXED = np.eye(4, dtype=complex) / 4


@dataclass(frozen=True)
class TomographySetting:
    projector_a: str
    projector_b: str

    def __post_init__(self):
        for p in (self.projector_a, self.projector_b):
            if p not in PROJECTORS:
                raise DomainError(f"unknown projector {p!r}; choose from {sorted(PROJECTORS)}")

    @property
    def operator(self) -> np.ndarray:
        return ket_projector(np.kron(PROJECTORS[self.projector_a], PROJECTORS[self.projector_b]))


STANDARD_SETTINGS = tuple(TomographySetting(a, b) for a, b in product(PROJECTORS, PROJECTORS))


@dataclass(frozen=True)
class CountsTable:
    """Counts per setting with the binomial trial number ``n`` of each.

    ``n`` may be non-integer when it is an efficiency-corrected normalization;
    ``counts`` may be non-integer for exact-probability inputs.
    """
    settings: tuple
    counts: np.ndarray
    n: np.ndarray = field(default=None)

    def __post_init__(self):
        settings = tuple(self.settings)
        counts = np.asarray(self.counts, dtype=float)
        n = np.asarray(self.n if self.n is not None else counts.sum(), dtype=float)
        n = np.broadcast_to(n, counts.shape).astype(float)
        if counts.shape != (len(settings),):
            raise DomainError("one count per setting required")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise DomainError("counts must be finite and non-negative")
        if not np.any(counts > 0):
            raise DomainError("at least one count must be nonzero")
        if np.any(n <= 0) or np.any(counts > n * (1 + 1e-12)):
            raise DomainError("need 0 <= counts <= n with n > 0")
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "n", n)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.n

    def to_csv(self) -> str:
        rows = [(s.projector_a, s.projector_b, _num(c), _num(n))
                for s, c, n in zip(self.settings, self.counts, self.n)]
        return table_text(["proj_a", "proj_b", "counts", "n"], rows)


def _num(x: float):
    return int(x) if float(x).is_integer() else float(x)


def counts_from_csv(text: str) -> CountsTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "proj_a,proj_b,counts,n":
        raise ConfigurationError("counts file must start with 'proj_a,proj_b,counts,n'")
    settings, counts, n = [], [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ConfigurationError(f"malformed counts row {ln!r}")
        settings.append(TomographySetting(parts[0], parts[1]))
        counts.append(float(parts[2]))
        n.append(float(parts[3]))
    return CountsTable(tuple(settings), np.array(counts), np.array(n))


def write_counts(path, table: CountsTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(table.to_csv())


def read_counts(path) -> CountsTable:
    with open(path, encoding="utf-8") as fh:
        return counts_from_csv(fh.read())


def state_to_text(rho) -> str:
    m = _matrix(rho)
    lines = ["# basis: " + ",".join(BASIS_LABELS)]
    for row in m:
        lines.append(" ".join(f"{fmt(z.real)}{'+' if z.imag >= 0 or math.isnan(z.imag) else '-'}"
                              f"{fmt(abs(z.imag))}i" for z in row))
    return "\n".join(lines) + "\n"


def state_from_text(text: str) -> TwoQubitState:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if len(rows) != 4 or any(len(r) != 4 for r in rows):
        raise ConfigurationError("state file needs 4 rows of 4 entries")
    try:
        m = np.array([[complex(z.replace("i", "j")) for z in r] for r in rows])
    except ValueError as exc:
        raise ConfigurationError(f"bad matrix entry: {exc}") from None
    return TwoQubitState(m)


def write_state(path, rho) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(state_to_text(rho))


def read_state(path) -> TwoQubitState:
    with open(path, encoding="utf-8") as fh:
        return state_from_text(fh.read())


def probabilities(rho, settings=STANDARD_SETTINGS) -> np.ndarray:
    m = _matrix(rho)
    return np.array([np.real(np.trace(m @ s.operator)) for s in settings])


def generate_counts(rho, settings=STANDARD_SETTINGS, n_per_setting: int = 10**5, seed: int = 0) -> CountsTable:
    """Binomial counts per setting, deterministic in ``seed``."""
    m = TwoQubitState(_matrix(rho)).matrix
    if n_per_setting < 1:
        raise DomainError("n_per_setting must be >= 1")
    p = np.clip(probabilities(m, settings), 0.0, 1.0)
    counts = substream(seed, _TAG_COUNTS).binomial(int(n_per_setting), p)
    return CountsTable(tuple(settings), counts, np.full(len(settings), int(n_per_setting)))


def exact_counts(rho, settings=STANDARD_SETTINGS) -> CountsTable:
    """Infinite-statistics limit: counts equal the probabilities with n = 1."""
    return CountsTable(tuple(settings), np.clip(probabilities(rho, settings), 0.0, 1.0), np.ones(len(settings)))


# Linear inversion on the Pauli-product basis.

_PAULI = [np.eye(2), np.array([[0, 1], [1, 0]]), _Y, np.diag([1, -1])]
_PAULI2 = np.array([np.kron(a, b) for a in _PAULI for b in _PAULI], dtype=complex)


def _check_settings(counts: CountsTable):
    if len(counts.settings) != 16 or len(set(counts.settings)) != 16:
        raise ConfigurationError("tomography needs 16 distinct settings")
    time_block = [i for i, s in enumerate(counts.settings)
                  if s.projector_a in ("e", "l") and s.projector_b in ("e", "l")]
    if time_block and not np.any(counts.counts[time_block] > 0):
        raise DomainError("all time-basis counts are zero")


def _design(settings) -> np.ndarray:
    ops = np.array([s.operator for s in settings])
    return np.real(np.einsum("kij,mji->km", ops, _PAULI2)) / 4


def linear_inversion(counts: CountsTable) -> np.ndarray:
    """Hermitian unit-trace estimate; may have small negative eigenvalues."""
    _check_settings(counts)
    B = _design(counts.settings)
    if np.linalg.matrix_rank(B, tol=1e-9) < 16:
        raise ConfigurationError("settings are not tomographically complete")
    r = np.linalg.solve(B, counts.frequencies)
    rho = np.einsum("m,mij->ij", r, _PAULI2) / 4
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if tr <= 0:
        raise DomainError("linear inversion produced a non-positive trace")
    return rho / tr


# Maximum likelihood on the Cholesky parameterization rho = T^dagger T / Tr.

_LOWER = np.tril_indices(4, -1)


def _t_from_params(x) -> np.ndarray:
    T = np.diag(x[:4]).astype(complex)
    T[_LOWER] = x[4:10] + 1j * x[10:16]
    return T


def _params_from_rho(rho) -> np.ndarray:
    rho = 0.999 * rho + 0.001 * MAXIMALLY_MIXED
    J = np.eye(4)[::-1]
    L = np.linalg.cholesky(J @ rho @ J)
    T = (J @ L @ J).conj().T  # lower triangular with T^dagger T = rho
    return np.concatenate([T.diagonal().real, T[_LOWER].real, T[_LOWER].imag])


def _rho_from_params(x) -> np.ndarray:
    T = _t_from_params(x)
    A = T.conj().T @ T
    return A / np.trace(A).real


def log_likelihood(rho, counts: CountsTable) -> float:
    q = np.clip(probabilities(rho, counts.settings), _PROB_FLOOR, 1 - _PROB_FLOOR)
    c, n = counts.counts, counts.n
    return float(np.sum(c * np.log(q)) + np.sum((n - c) * np.log1p(-q)))


def _objective(x, ops, c, n, scale):
    T = _t_from_params(x)
    A = T.conj().T @ T
    a = np.trace(A).real
    rho = A / a
    q = np.clip(np.real(np.einsum("kij,ji->k", ops, rho)), _PROB_FLOOR, 1 - _PROB_FLOOR)
    f = -(np.sum(c * np.log(q)) + np.sum((n - c) * np.log1p(-q))) / scale
    w = (c / q - (n - c) / (1 - q)) / scale
    G = np.einsum("k,kij->ij", w, ops)
    Gh = (G - np.real(np.trace(G @ rho)) * np.eye(4)) / a
    M = T @ Gh
    g = np.concatenate([2 * M.diagonal().real, 2 * M[_LOWER].real, 2 * M[_LOWER].imag])
    return f, -g


def mle_reconstruct(counts: CountsTable, max_iter: int = 5000) -> TwoQubitState:
    """Maximum-likelihood state, started from the PSD-projected linear inversion.

    Raises ConvergenceError (with ``best``) when the iteration budget runs out.
    """
    start = project_psd(linear_inversion(counts))
    ops = np.array([s.operator for s in counts.settings])
    scale = float(np.sum(counts.n))
    res = minimize(_objective, _params_from_rho(start), args=(ops, counts.counts, counts.n, scale),
                   jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": max_iter})
    best = _rho_from_params(res.x)
    best = 0.5 * (best + best.conj().T)
    if res.status == 1 or not np.all(np.isfinite(res.x)):
        raise ConvergenceError("maximum-likelihood optimizer did not converge", best=TwoQubitState(best)
                               if np.all(np.isfinite(best)) else None,
                               diagnostic=f"{res.message}; |grad| = {np.linalg.norm(res.jac):.3g}")
    return TwoQubitState(best)


# Entanglement measures.

def fidelity(rho, phi: float = 0.0) -> float:
    """<Phi(phi)| rho |Phi(phi)> with |Phi(phi)> = (|ee> + e^{i phi}|ll>)/sqrt(2)."""
    m = _matrix(rho)
    return float(0.5 * (m[0, 0].real + m[3, 3].real) + np.real(np.exp(1j * phi) * m[0, 3]))


def optimized_fidelity(rho) -> tuple[float, float]:
    """(maximum fidelity over phi, maximizing phi = -arg rho_{ee,ll})."""
    m = _matrix(rho)
    phi = -float(np.angle(m[0, 3])) if abs(m[0, 3]) > 0 else 0.0
    return 0.5 * (m[0, 0].real + m[3, 3].real) + abs(m[0, 3]), phi


def concurrence(rho) -> float:
    """Wootters concurrence."""
    m = _matrix(rho)
    R = m @ _YY @ m.conj() @ _YY
    lam = np.sqrt(np.clip(np.sort(np.linalg.eigvals(R).real)[::-1], 0.0, None))
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def tangle(rho) -> float:
    return concurrence(rho) ** 2


@dataclass(frozen=True)
class EntanglementReport:
    fidelity: float
    concurrence: float
    tangle: float
    phase_optimized_fidelity: float
    optimal_phase: float
    errors: dict | None = None

    def __post_init__(self):
        if abs(self.tangle - self.concurrence ** 2) > 1e-9:
            raise DomainError("tangle must equal concurrence squared")
        if self.fidelity > self.phase_optimized_fidelity + 1e-12:
            raise DomainError("fixed-phase fidelity exceeds the optimized one")

    def rows(self):
        errs = self.errors or {}
        return [(k, getattr(self, k), errs.get(k, ""))
                for k in ("fidelity", "phase_optimized_fidelity", "concurrence", "tangle", "optimal_phase")]

    def to_csv(self) -> str:
        return table_text(["quantity", "value", "error"], self.rows())


def entanglement_report(rho, phi: float = 0.0) -> EntanglementReport:
    c = concurrence(rho)
    f_opt, phi_opt = optimized_fidelity(rho)
    return EntanglementReport(fidelity(rho, phi), c, c * c, float(max(f_opt, fidelity(rho, phi))), phi_opt)


def bootstrap_report(counts: CountsTable, phi: float = 0.0, n_resamples: int = 100, seed: int = 0,
                     threads: int | None = None) -> EntanglementReport:
    """Report of the MLE state with parametric-bootstrap standard errors."""
    if n_resamples < 2:
        raise DomainError("need at least two bootstrap resamples")
    rho = mle_reconstruct(counts)
    base = entanglement_report(rho, phi)
    p = np.clip(probabilities(rho, counts.settings), 0.0, 1.0)
    integral = np.all(counts.n == np.round(counts.n))

    def one(i):
        rng = substream(seed, _TAG_BOOT, i)
        while True:
            c = rng.binomial(counts.n.astype(np.int64), p) if integral else \
                np.minimum(rng.poisson(counts.n * p), np.floor(counts.n))
            if np.any(c > 0):
                break
        r = entanglement_report(mle_reconstruct(CountsTable(counts.settings, c, counts.n)), phi)
        return r.fidelity, r.phase_optimized_fidelity, r.concurrence, r.tangle

    samples = np.array(map_ordered(one, range(n_resamples), threads))
    sd = samples.std(axis=0, ddof=1)
    errors = dict(zip(("fidelity", "phase_optimized_fidelity", "concurrence", "tangle"), map(float, sd)))
    return EntanglementReport(base.fidelity, base.concurrence, base.tangle, base.phase_optimized_fidelity,
                              base.optimal_phase, errors)
