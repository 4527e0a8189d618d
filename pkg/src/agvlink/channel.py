"""Correlated Rayleigh fading outage model for the downlink.

Each slot of length ts carries one command packet of D bits to one of N
vehicles sharing bandwidth B, so the required spectral efficiency is
R = D*N/(ts*B) and a packet is lost when the instantaneous SNR falls below
gamma_th = (2^R - 1)/avg_snr. The channel gain follows a first-order
Gauss-Markov process whose slot-to-slot correlation is rho = J0(2*pi*f_d*ts)
with Doppler f_d = v*f_c/c. Consecutive losses are then governed by the
back-to-back conditional outage probability

    p_bb = 1 - [Q1(phi, rho*phi) - Q1(rho*phi, phi)] / (e^gamma_th - 1)

(Q1 = first-order Marcum function), and a run of n losses has probability
P_e(n) = p1 * p_bb^(n-1).

The special functions are implemented here rather than imported: J0 as a
power series below |x| = 8 and a Hankel asymptotic expansion with Cephes
rational coefficients beyond; Q1 as a scaled-Bessel series with a Miller
downward recurrence for moderate a*b and composite Gauss-Legendre quadrature
of the defining density for the huge arguments the rho -> 1 clamp produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .exceptions import NumericConsistencyError, ParameterError

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_FREQ = 5.9e9
RHO_LIMIT = 1.0 - 1e-9
PRNG_ID = "pcg64-polar"

PHI_CONVENTIONS = ("zorzi_sqrt", "paper_literal")


@dataclass(frozen=True)
class LinkParams:
    """Shared-downlink parameters; avg_snr is linear, not dB."""

    bandwidth_hz: float = 10e6
    num_agvs: int = 50
    payload_bits: int = 78 * 8
    avg_snr: float = 10.0
    carrier_freq_hz: float = DEFAULT_CARRIER_FREQ

    def __post_init__(self) -> None:
        if min(self.bandwidth_hz, self.num_agvs, self.payload_bits,
               self.avg_snr, self.carrier_freq_hz) <= 0:
            raise ParameterError("all link parameters must be strictly positive")


@dataclass(frozen=True)
class OutageModel:
    """Derived per-slot outage quantities for one operating point."""

    gamma_th: float
    rho: float
    phi: float
    p1: float
    p_bb: float
    phi_convention: str = "zorzi_sqrt"


def spectral_efficiency(payload_bits: float, num_agvs: float, ts: float,
                        bandwidth_hz: float) -> float:
    """Bits per second per Hz needed to serve every vehicle each slot."""
    if min(payload_bits, num_agvs, ts, bandwidth_hz) <= 0:
        raise ParameterError("spectral efficiency inputs must be positive")
    return payload_bits * num_agvs / (ts * bandwidth_hz)


def snr_threshold(rate: float, avg_snr: float) -> float:
    """Normalized SNR below which a packet at spectral efficiency `rate` fails."""
    if rate < 0 or avg_snr <= 0:
        raise ParameterError("rate must be nonnegative and avg_snr positive")
    return (2.0 ** rate - 1.0) / avg_snr


def outage_probability(gamma_th: float) -> float:
    """Unconditional per-slot loss probability of the Rayleigh channel."""
    if gamma_th < 0:
        raise ParameterError("gamma_th must be nonnegative")
    return -math.expm1(-gamma_th)


def doppler_shift(velocity: float, carrier_freq: float = DEFAULT_CARRIER_FREQ) -> float:
    """Doppler spread of a carrier seen from a platform moving at `velocity`."""
    if velocity < 0:
        raise ParameterError("velocity must be nonnegative")
    return velocity * carrier_freq / SPEED_OF_LIGHT


# --- Bessel J0 -------------------------------------------------------------

# Hankel-expansion rationals from the Cephes math library (j0.c),
# release 2.1 (1984, 1987, 1989, Stephen L. Moshier); absolute error
# ~4e-16 on the asymptotic domain.
_SQ2OPI = 7.9788456080286535587989e-1   # sqrt(2/pi)
_PIO4 = 7.85398163397448309616e-1

_PP = (7.96936729297347051624e-4, 8.28352392107440799803e-2,
       1.23953371646414299388e0, 5.44725003058768775090e0,
       8.74716500199817011941e0, 5.30324038235394892183e0,
       9.99999999999999997821e-1)
_PQ = (9.24408810558863637013e-4, 8.56288474354474431428e-2,
       1.25352743901058953537e0, 5.47097740330417105182e0,
       8.76190883237069594232e0, 5.30605288235394617618e0,
       1.00000000000000000218e0)
_QP = (-1.13663838898469149931e-2, -1.28252718670509318512e0,
       -1.95539544257735972385e1, -9.32060152123768231369e1,
       -1.77681167980488050595e2, -1.47077505154951170175e2,
       -5.14105326766599330220e1, -6.05014350600728481186e0)
_QQ = (6.43178256118178023184e1, 8.56430025976980587198e2,
       3.88240183605401609683e3, 7.24046774195652478189e3,
       5.93072701187316984827e3, 2.06209331660327847417e3,
       2.42005740240291393179e2)


def _polevl(x: float, coef) -> float:
    ans = coef[0]
    for c in coef[1:]:
        ans = ans * x + c
    return ans


def _p1evl(x: float, coef) -> float:
    ans = x + coef[0]
    for c in coef[1:]:
        ans = ans * x + c
    return ans


def bessel_j0(x: float) -> float:
    """Bessel function of the first kind, order zero.

    Power series sum_k (-x^2/4)^k / (k!)^2 below |x| = 8 (compensated
    summation keeps the alternating cancellation at ~1e-13 absolute),
    Hankel asymptotic expansion beyond.
    """
    x = abs(float(x))
    if not math.isfinite(x):
        raise ParameterError("bessel_j0 requires finite x")
    if x < 8.0:
        t = -0.25 * x * x
        term = 1.0
        terms = [1.0]
        k = 0
        while abs(term) > 1e-20:
            k += 1
            term *= t / (k * k)
            terms.append(term)
        return math.fsum(terms)
    z = 25.0 / (x * x)
    p = _polevl(z, _PP) / _polevl(z, _PQ)
    q = _polevl(z, _QP) / _p1evl(z, _QQ)
    xn = x - _PIO4
    return _SQ2OPI * (p * math.cos(xn) - (5.0 / x) * q * math.sin(xn)) / math.sqrt(x)


def fading_correlation(f_d: float, ts: float) -> float:
    """Slot-to-slot gain correlation J0(2*pi*f_d*ts), clamped away from +-1.

    The clamp (at 1 - 1e-9) keeps the conditional-outage expression finite at
    zero Doppler instead of special-casing a degenerate fully-coherent slot.
    """
    if f_d < 0 or ts <= 0:
        raise ParameterError("f_d must be nonnegative and ts positive")
    rho = bessel_j0(2.0 * math.pi * f_d * ts)
    return min(max(rho, -RHO_LIMIT), RHO_LIMIT)


# --- Marcum Q1 -------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_SERIES_MAX_AB = 1.0e4
_SUPPORT_HALFWIDTH = 42.0   # exp(-42^2/2) is far below any tolerance here


def _bessel_i0e(z: float) -> float:
    """Scaled modified Bessel I0(z)*exp(-z) for z >= 0."""
    if z <= 100.0:
        t = 0.25 * z * z
        term, total, k = 1.0, 1.0, 0
        while term > 1e-18 * total:
            k += 1
            term *= t / (k * k)
            total += term
        return total * math.exp(-z)
    u = 1.0 / (8.0 * z)
    # first asymptotic terms; past z=100 the truncation sits below 1e-14 relative
    series = 1.0 + u * (1.0 + u * (4.5 + u * (37.5 + u * 459.375)))
    return series / math.sqrt(2.0 * math.pi * z)


def _ive_sequence(x: float, kmax: int) -> list[float]:
    """I_k(x)*exp(-x) for k = 0..kmax by normalized downward recurrence."""
    if x == 0.0:
        out = [0.0] * (kmax + 1)
        out[0] = 1.0
        return out
    start = kmax + int(math.ceil(math.sqrt(40.0 * max(kmax, 1)))) + 20
    vals = [0.0] * (start + 2)
    vals[start] = 1e-300
    for k in range(start, 0, -1):
        nxt = vals[k + 1] + (2.0 * k / x) * vals[k]
        vals[k - 1] = nxt
        if nxt > 1e250:   # rescale mid-recurrence to dodge overflow
            scale = 1e-250
            for j in range(k - 1, start + 2):
                vals[j] *= scale
    norm = vals[0] + 2.0 * math.fsum(vals[1:start + 1])
    return [v / norm for v in vals[:kmax + 1]]


def _marcum_series(a: float, b: float) -> float:
    lo, hi = (a, b) if a <= b else (b, a)
    x = a * b
    r = lo / hi
    k_ive = int(math.ceil(9.2 * math.sqrt(x))) + 30
    if r < 0.999:
        k_geo = int(math.ceil(-41.5 / math.log(r))) + 2 if r > 0 else 1
        kmax = min(k_geo, k_ive)
    else:
        kmax = k_ive
    ive = _ive_sequence(x, kmax)
    prefactor = math.exp(-0.5 * (hi - lo) * (hi - lo))
    if a <= b:
        powers = [ive[k] * r**k for k in range(kmax + 1)]
        return prefactor * math.fsum(powers)
    # complement identity keeps the geometric base below one for a > b
    powers = [ive[k] * r**k for k in range(1, kmax + 1)]
    return 1.0 - prefactor * math.fsum(powers)


def _marcum_quadrature(a: float, b: float) -> float:
    def density(x: float) -> float:
        return x * math.exp(-0.5 * (x - a) * (x - a)) * _bessel_i0e(a * x)

    def panels(lo: float, hi: float) -> float:
        total = 0.0
        edges = np.linspace(lo, hi, 24)
        for i in range(len(edges) - 1):
            mid = 0.5 * (edges[i] + edges[i + 1])
            half = 0.5 * (edges[i + 1] - edges[i])
            total += half * math.fsum(
                w * density(mid + half * t)
                for t, w in zip(_GL_NODES, _GL_WEIGHTS))
        return total

    if b >= a:
        if b - a > _SUPPORT_HALFWIDTH:
            return 0.0
        return panels(b, b + _SUPPORT_HALFWIDTH)
    lo = max(0.0, a - _SUPPORT_HALFWIDTH)
    if b <= lo:
        return 1.0
    return 1.0 - panels(lo, b)


def marcum_q1(a: float, b: float) -> float:
    """First-order Marcum Q function Q1(a, b)."""
    if a < 0 or b < 0:
        raise ParameterError("marcum_q1 requires nonnegative arguments")
    if b == 0.0:
        return 1.0
    if a == 0.0:
        return math.exp(-0.5 * b * b)
    if a * b <= _SERIES_MAX_AB:
        q = _marcum_series(a, b)
    else:
        q = _marcum_quadrature(a, b)
    return min(max(q, 0.0), 1.0)


# --- outage chain ----------------------------------------------------------

def phi_variable(gamma_th: float, rho: float, convention: str = "zorzi_sqrt") -> float:
    """Noncentrality variable feeding the Marcum terms of p_bb.

    zorzi_sqrt uses sqrt(2*gamma_th/(1-rho^2)), the form whose rho -> 0 limit
    reproduces the unconditional loss probability; paper_literal keeps the
    unsquare-rooted variant for side-by-side comparisons.
    """
    if convention not in PHI_CONVENTIONS:
        raise ParameterError(f"unknown phi convention {convention!r}")
    if gamma_th <= 0:
        raise ParameterError("gamma_th must be positive")
    if abs(rho) >= 1.0:
        raise ParameterError("|rho| must be below 1 (clamp upstream)")
    ratio = 2.0 * gamma_th / (1.0 - rho * rho)
    return math.sqrt(ratio) if convention == "zorzi_sqrt" else ratio


def back_to_back_prob(gamma_th: float, rho: float,
                      convention: str = "zorzi_sqrt") -> float:
    """Conditional loss probability given a loss in the previous slot.

    Evaluated with |rho|: the envelope statistics depend on the squared
    correlation, and J0 swings negative at fast Doppler.
    """
    ar = abs(rho)
    phi = phi_variable(gamma_th, ar, convention)
    numerator = marcum_q1(phi, ar * phi) - marcum_q1(ar * phi, phi)
    p_bb = 1.0 - numerator / math.expm1(gamma_th)
    if p_bb < -1e-6 or p_bb > 1.0 + 1e-6:
        raise NumericConsistencyError(
            f"back-to-back probability {p_bb} out of range before clamping")
    return min(max(p_bb, 0.0), 1.0)


def consecutive_outage_prob(n: int, p1: float, p_bb: float) -> float:
    """Probability of n consecutive losses, p1 * p_bb^(n-1).

    Evaluated in the log domain for long runs; underflows to 0.0 only when
    the true value is below the smallest positive float.
    """
    if n < 1:
        raise ParameterError("run length n must be at least 1")
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p_bb <= 1.0):
        raise ParameterError("p1 and p_bb must be probabilities")
    if n == 1:
        return p1
    if p_bb == 0.0:
        return 0.0
    if n <= 50:
        return p1 * p_bb ** (n - 1)
    log_p = math.log(p1) + (n - 1) * math.log(p_bb) if p1 > 0 else -math.inf
    return math.exp(log_p) if log_p > -745.0 else 0.0


def consecutive_outage_log10(n: int, p1: float, p_bb: float) -> float:
    """log10 of consecutive_outage_prob; representable far past underflow."""
    if n < 1:
        raise ParameterError("run length n must be at least 1")
    if p1 <= 0.0 or (p_bb <= 0.0 and n > 1):
        return -math.inf
    return (math.log10(p1) + (n - 1) * math.log10(p_bb)) if n > 1 else math.log10(p1)


def build_outage_model(link: LinkParams, ts: float, velocity: float,
                       convention: str = "zorzi_sqrt") -> OutageModel:
    """Assemble the per-slot outage quantities for one operating point."""
    rate = spectral_efficiency(link.payload_bits, link.num_agvs, ts,
                               link.bandwidth_hz)
    gamma_th = snr_threshold(rate, link.avg_snr)
    f_d = doppler_shift(velocity, link.carrier_freq_hz)
    rho = fading_correlation(f_d, ts)
    phi = phi_variable(gamma_th, abs(rho), convention)
    return OutageModel(gamma_th=gamma_th, rho=rho, phi=phi,
                       p1=outage_probability(gamma_th),
                       p_bb=back_to_back_prob(gamma_th, rho, convention),
                       phi_convention=convention)


# --- samplers --------------------------------------------------------------

def _polar_normals(gen: np.random.Generator, count: int) -> np.ndarray:
    """Standard normals via the Marsaglia polar transform.

    Fixed-chunk rejection keeps the draw order deterministic for a given
    bit-generator state, independent of platform math libraries.
    """
    out = np.empty(count)
    filled = 0
    chunk = 1 << 16
    while filled < count:
        u = 2.0 * gen.random(chunk) - 1.0
        v = 2.0 * gen.random(chunk) - 1.0
        s = u * u + v * v
        keep = (s > 0.0) & (s < 1.0)
        u, v, s = u[keep], v[keep], s[keep]
        factor = np.sqrt(-2.0 * np.log(s) / s)
        pair = np.empty(2 * len(s))
        pair[0::2] = u * factor
        pair[1::2] = v * factor
        take = min(len(pair), count - filled)
        out[filled:filled + take] = pair[:take]
        filled += take
    return out


def _generator(seed: int, stream: int) -> np.random.Generator:
    bits = np.random.PCG64(seed)
    if stream:
        bits = bits.jumped(stream)   # documented parallel-stream splitting rule
    return np.random.Generator(bits)


def sample_fading_gains(rho: float, length: int, seed: int,
                        stream: int = 0) -> np.ndarray:
    """Complex Gauss-Markov gain sequence h(k) = rho h(k-1) + sqrt(1-rho^2) w(k).

    h(0) and the innovations w are circularly-symmetric unit Gaussians, so
    the marginal stays unit Rayleigh-power for every k.
    """
    if abs(rho) >= 1.0:
        raise ParameterError("|rho| must be below 1")
    if length < 1:
        raise ParameterError("length must be at least 1")
    z = _polar_normals(_generator(seed, stream), 2 * length)
    cplx = (z[0::2] + 1j * z[1::2]) * math.sqrt(0.5)
    h0 = cplx[0]
    if length == 1:
        return cplx[:1]
    innovation_gain = math.sqrt(1.0 - rho * rho)
    tail, _ = lfilter([innovation_gain], [1.0, -rho], cplx[1:],
                      zi=np.array([rho * h0]))
    return np.concatenate(([h0], tail))


def sample_outage_sequence(rho: float, gamma_th: float, length: int, seed: int,
                           stream: int = 0) -> np.ndarray:
    """Boolean loss sequence: slot k lost when the gain power drops below gamma_th."""
    if gamma_th < 0:
        raise ParameterError("gamma_th must be nonnegative")
    h = sample_fading_gains(rho, length, seed, stream)
    return (h.real * h.real + h.imag * h.imag) < gamma_th


def sample_markov_outages(p1: float, p_bb: float, length: int, seed: int,
                          stream: int = 0) -> np.ndarray:
    """Loss sequence from the two-state chain the run-length formula assumes.

    Stationary start: P(loss) = p1; transitions P(loss|loss) = p_bb and
    P(loss|clear) = p1 (1 - p_bb)/(1 - p1), which keeps the marginal at p1.
    """
    if not (0.0 <= p1 < 1.0 and 0.0 <= p_bb <= 1.0):
        raise ParameterError("need 0 <= p1 < 1 and 0 <= p_bb <= 1")
    if length < 1:
        raise ParameterError("length must be at least 1")
    p01 = p1 * (1.0 - p_bb) / (1.0 - p1)
    if p01 > 1.0:
        raise ParameterError("p_bb too small for a stationary chain at this p1")
    u = _generator(seed, stream).random(length)
    out = np.empty(length, dtype=bool)
    state = bool(u[0] < p1)
    out[0] = state
    for k in range(1, length):
        state = bool(u[k] < (p_bb if state else p01))
        out[k] = state
    return out
