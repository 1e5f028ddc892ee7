"""Independent reference computations used by the test-suite.

These deliberately avoid the package's superoperator/expm machinery: the
master equation is stepped in operator form, and the pulse-free tail of the
cascade is summed with closed-form rate-equation solutions.
"""
import math

import numpy as np

from qdcascade.dynamics import FWHM_TO_SIGMA, PULSE_HALF_SPAN


def _ops():
    s = lambda i, j: np.eye(3)[:, [i]] @ np.eye(3)[[j], :]
    return s


def operator_rhs_batch(rho, params, omega):
    """Master-equation RHS for rho (B,3,3) with complex drive omega (B,)."""
    s = _ops()
    B = rho.shape[0]
    H = np.zeros((B, 3, 3), dtype=complex)
    H[:, 1, 0] = 0.5 * omega
    H[:, 0, 1] = 0.5 * np.conj(omega)
    H[:, 2, 1] = 0.5 * omega
    H[:, 1, 2] = 0.5 * np.conj(omega)
    H[:, 1, 1] = params.delta_x - params.delta_xx
    H[:, 2, 2] = -2 * params.delta_xx
    out = -1j * (H @ rho - rho @ H)
    terms = [(s(1, 2), params.gamma_xx), (s(0, 1), params.gamma_x),
             (s(2, 2) - s(1, 1), params.gamma_dxx), (s(1, 1) - s(0, 0), params.gamma_dx)]
    for L, g in terms:
        Ld = L.conj().T
        out = out + 0.5 * g * (2 * L @ rho @ Ld - Ld @ L @ rho - rho @ Ld @ L)
    if params.gamma_inc:
        L = s(2, 2) - s(0, 0)
        rate = (0.5 * params.gamma_inc * np.abs(omega) ** 2)[:, None, None]
        out = out + 0.5 * rate * (2 * L @ rho @ L - L @ L @ rho - rho @ L @ L)
    return out


def tail_emission(p_xx, p_x, g_xx, g_x, T):
    """Emission after the drive from populations (p_xx, p_x) over a time T."""
    e_xx = p_xx * (1 - math.exp(-g_xx * T))
    if abs(g_x - g_xx) < 1e-15:
        raise ValueError("equal decay rates not supported by the oracle")
    e_x = p_x * (1 - math.exp(-g_x * T)) + p_xx * g_xx * g_x / (g_x - g_xx) * (
        (1 - math.exp(-g_xx * T)) / g_xx - (1 - math.exp(-g_x * T)) / g_x)
    return e_xx, e_x


def single_pulse_emission(params, areas, fwhm=4.0, dt=1e-3, phase=0.0):
    """(p_emit_xx, p_emit_x) for single pulses from |g>, default window.

    Operator-form RK4 at step dt through the pulse support, then the
    closed-form tail up to center + 10 longest lifetimes.
    """
    areas = np.asarray(areas, dtype=float)
    B = len(areas)
    sig = fwhm * FWHM_TO_SIGMA
    t0, t1 = -PULSE_HALF_SPAN * fwhm, PULSE_HALF_SPAN * fwhm
    n = int(round((t1 - t0) / dt))
    h = (t1 - t0) / n
    rho = np.zeros((B, 3, 3), dtype=complex)
    rho[:, 0, 0] = 1
    acc = np.zeros((B, 2))
    amp = areas / (sig * math.sqrt(2 * math.pi)) * np.exp(0.5j * phase)

    def f(t, r):
        om = amp * math.exp(-0.5 * (t / sig) ** 2)
        d = operator_rhs_batch(r, params, om)
        e = np.stack([params.gamma_xx * r[:, 2, 2].real, params.gamma_x * r[:, 1, 1].real], axis=1)
        return d, e

    for k in range(n):
        t = t0 + k * h
        k1, e1 = f(t, rho)
        k2, e2 = f(t + h / 2, rho + h / 2 * k1)
        k3, e3 = f(t + h / 2, rho + h / 2 * k2)
        k4, e4 = f(t + h, rho + h * k3)
        rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        acc = acc + h / 6 * (e1 + 2 * e2 + 2 * e3 + e4)
    life = 1 / min(params.gamma_xx, params.gamma_x)
    T = 10 * life - t1
    out = np.zeros((B, 2))
    for b in range(B):
        txx, tx = tail_emission(rho[b, 2, 2].real, rho[b, 1, 1].real, params.gamma_xx, params.gamma_x, T)
        out[b] = acc[b] + (txx, tx)
    return out
