"""Symbol mapping and frame composition for the coherent PON link.

A frame starts with a known QPSK training prefix, followed by the frame
body: a four-point diagonal pilot inserted at the head of every
``PILOT_SPACING``-symbol block, the rest of each block being Gray-coded
16QAM payload.  The pilot constellation is geometrically shaped: its four
points sit at ``{-3d, -a*d, +a*d, +3d} * (1+1j)`` so that the first
(sign) bit steers carrier-phase recovery while the second (magnitude)
bit carries protected key material.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAYLOAD_SYMBOLS_PER_FRAME = 8640
UPSTREAM_TRAINING_SYMBOLS = 416
DOWNSTREAM_TRAINING_SYMBOLS = 480
PILOT_SPACING = 32          # one pilot heads every 32-symbol block of the body
LINE_RATE_GBPS = 256.0      # gross aggregate rate clocked through the frame
LDPC_CODE_RATE = 14592 / 17280

# Gray labels of four amplitude levels in ascending order: the high bit
# flips with the sign, the low bit with the magnitude.
_PAM4_GRAY = np.array([0b00, 0b01, 0b11, 0b10], dtype=np.uint8)
_PAM4_GRAY_INV = np.argsort(_PAM4_GRAY).astype(np.uint8)   # label -> level index
_PAM4_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0])
_QAM16_SCALE = 1.0 / np.sqrt(10.0)                          # unit mean symbol energy


@dataclass(frozen=True)
class GcsPilotParams:
    """Shaping parameter of the diagonal pilot constellation.

    ``a`` is the inner-point amplitude in units of ``d``; ``a = 1`` gives a
    uniform PAM4 pilot and ``a = 3`` collapses it to BPSK.  ``d`` is fixed
    by normalizing the mean pilot energy to the unit-energy payload.
    """

    a: float = 1.7

    def __post_init__(self) -> None:
        if not 0.0 < self.a <= 3.0:
            raise ValueError(f"shaping parameter a must lie in (0, 3], got {self.a}")

    @property
    def d(self) -> float:
        """Base spacing: 1/sqrt(9 + a^2), making E|pilot|^2 = 1."""
        return 1.0 / np.sqrt(9.0 + self.a * self.a)

    @property
    def decision_threshold(self) -> float:
        """Magnitude-bit threshold (3 + a)/2 in units of ``d`` on the diagonal."""
        return 0.5 * (3.0 + self.a)

    def amplitudes(self) -> np.ndarray:
        """Diagonal amplitudes in ascending order, one per Gray label."""
        return np.array([-3.0, -self.a, self.a, 3.0]) * self.d

    def points(self) -> np.ndarray:
        """Complex pilot constellation in ascending-amplitude order."""
        return self.amplitudes() * (1.0 + 1.0j)


@dataclass(frozen=True)
class FrameLayout:
    """Counts and positions of the three symbol classes inside one frame."""

    training_len: int
    payload_len: int = PAYLOAD_SYMBOLS_PER_FRAME
    pilot_spacing: int = PILOT_SPACING

    def __post_init__(self) -> None:
        if self.training_len < 0:
            raise ValueError(f"training_len must be >= 0, got {self.training_len}")
        if self.payload_len < 1:
            raise ValueError(f"payload_len must be >= 1, got {self.payload_len}")
        if self.pilot_spacing < 2:
            raise ValueError(f"pilot_spacing must be >= 2, got {self.pilot_spacing}")

    @property
    def n_pilots(self) -> int:
        """One pilot per started block of (spacing - 1) payload symbols."""
        return -(-self.payload_len // (self.pilot_spacing - 1))

    @property
    def body_len(self) -> int:
        return self.payload_len + self.n_pilots

    @property
    def total_len(self) -> int:
        return self.training_len + self.body_len

    def pilot_body_positions(self) -> np.ndarray:
        """Indices of pilots inside the frame body (training excluded)."""
        return np.arange(self.n_pilots) * self.pilot_spacing

    def payload_body_positions(self) -> np.ndarray:
        mask = np.ones(self.body_len, dtype=bool)
        mask[self.pilot_body_positions()] = False
        return np.nonzero(mask)[0]


def upstream_layout() -> FrameLayout:
    return FrameLayout(training_len=UPSTREAM_TRAINING_SYMBOLS)


def downstream_layout() -> FrameLayout:
    return FrameLayout(training_len=DOWNSTREAM_TRAINING_SYMBOLS)


@dataclass
class SymbolStream:
    """Complex baseband samples tagged with their symbol (or sample) rate."""

    symbols: np.ndarray
    symbol_rate_hz: float

    def power(self) -> float:
        return float(np.mean(np.abs(self.symbols) ** 2))


def _bits_to_level_idx(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    return _PAM4_GRAY_INV[(hi.astype(np.uint8) << 1) | lo.astype(np.uint8)]


def map_payload_16qam(bits: np.ndarray) -> np.ndarray:
    """Map bits (len divisible by 4) onto unit-energy Gray 16QAM.

    Bit order per symbol is (I-high, I-low, Q-high, Q-low); each axis uses
    the Gray ruler 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
    """
    bits = np.asarray(bits)
    if bits.size % 4:
        raise ValueError(f"payload bit count must be a multiple of 4, got {bits.size}")
    b = bits.reshape(-1, 4)
    i_lv = _PAM4_LEVELS[_bits_to_level_idx(b[:, 0], b[:, 1])]
    q_lv = _PAM4_LEVELS[_bits_to_level_idx(b[:, 2], b[:, 3])]
    return (i_lv + 1j * q_lv) * _QAM16_SCALE


def _axis_level_idx(v: np.ndarray) -> np.ndarray:
    # Decision boundaries at -2, 0, +2 (in level units); a value exactly on
    # a boundary resolves toward the smaller level index.
    bounds = np.array([-2.0, 0.0, 2.0]) * _QAM16_SCALE
    return np.digitize(v, bounds, right=True)


def demap_payload_16qam(symbols: np.ndarray) -> np.ndarray:
    """Hard-decide 16QAM symbols back to bits (inverse of the mapper)."""
    symbols = np.asarray(symbols)
    i_lab = _PAM4_GRAY[_axis_level_idx(symbols.real)]
    q_lab = _PAM4_GRAY[_axis_level_idx(symbols.imag)]
    out = np.empty((symbols.size, 4), dtype=np.uint8)
    out[:, 0] = i_lab >> 1
    out[:, 1] = i_lab & 1
    out[:, 2] = q_lab >> 1
    out[:, 3] = q_lab & 1
    return out.reshape(-1)


def hard_decision_16qam(symbols: np.ndarray) -> np.ndarray:
    """Nearest constellation point for each received payload symbol."""
    symbols = np.asarray(symbols)
    i_lv = _PAM4_LEVELS[_axis_level_idx(symbols.real)]
    q_lv = _PAM4_LEVELS[_axis_level_idx(symbols.imag)]
    return (i_lv + 1j * q_lv) * _QAM16_SCALE


def _axis_llrs(v: np.ndarray, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-axis LLRs (high bit, low bit); positive favors bit 0."""
    lv = _PAM4_LEVELS * _QAM16_SCALE
    ll = -((v[:, None] - lv[None, :]) ** 2) / (2.0 * sigma2)
    lab = _PAM4_GRAY
    hi0 = lab >> 1 == 0
    lo0 = (lab & 1) == 0
    hi = np.logaddexp.reduce(ll[:, hi0], axis=1) - np.logaddexp.reduce(ll[:, ~hi0], axis=1)
    lo = np.logaddexp.reduce(ll[:, lo0], axis=1) - np.logaddexp.reduce(ll[:, ~lo0], axis=1)
    return hi, lo


def payload_llrs_16qam(symbols: np.ndarray, noise_var: float) -> np.ndarray:
    """Per-bit LLRs for soft FEC decoding; noise_var is the total complex
    noise power per symbol.  Positive LLR means bit 0 is more likely."""
    if noise_var <= 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    symbols = np.asarray(symbols)
    sigma2 = noise_var / 2.0
    i_hi, i_lo = _axis_llrs(symbols.real, sigma2)
    q_hi, q_lo = _axis_llrs(symbols.imag, sigma2)
    out = np.empty((symbols.size, 4))
    out[:, 0] = i_hi
    out[:, 1] = i_lo
    out[:, 2] = q_hi
    out[:, 3] = q_lo
    return out.reshape(-1)


def map_pilot(first_bits: np.ndarray, second_bits: np.ndarray,
              params: GcsPilotParams) -> np.ndarray:
    """Map (sign, magnitude) bit pairs onto the diagonal pilot constellation."""
    first_bits = np.asarray(first_bits)
    second_bits = np.asarray(second_bits)
    if first_bits.shape != second_bits.shape:
        raise ValueError("first_bits and second_bits must have equal length")
    idx = _bits_to_level_idx(first_bits, second_bits)
    return params.points()[idx]


def diagonal_projection(symbols: np.ndarray) -> np.ndarray:
    """Signal coordinate along the (1+1j) diagonal (noise-halving projection)."""
    symbols = np.asarray(symbols)
    return 0.5 * (symbols.real + symbols.imag)


def demap_pilot(symbols: np.ndarray, params: GcsPilotParams
                ) -> tuple[np.ndarray, np.ndarray]:
    """Hard-decide pilot symbols into (first_bits, second_bits).

    The first bit follows the sign of the diagonal projection, the second
    compares its magnitude against the (3+a)/2 threshold.
    """
    r = diagonal_projection(symbols)
    first = (r > 0).astype(np.uint8)
    second = (np.abs(r) < params.decision_threshold * params.d).astype(np.uint8)
    return first, second


def demap_pilot_llrs(symbols: np.ndarray, params: GcsPilotParams,
                     noise_var: float) -> np.ndarray:
    """Soft magnitude-bit LLRs from pilot symbols; positive favors bit 0.

    noise_var is the total complex noise power per symbol; the diagonal
    projection sees a quarter of it.
    """
    if noise_var <= 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    r = diagonal_projection(symbols)
    sigma2 = noise_var / 4.0
    amps = params.amplitudes()
    ll = -((r[:, None] - amps[None, :]) ** 2) / (2.0 * sigma2)
    outer = np.logaddexp(ll[:, 0], ll[:, 3])
    inner = np.logaddexp(ll[:, 1], ll[:, 2])
    return outer - inner


def pilot_phase_reference(first_bits: np.ndarray) -> np.ndarray:
    """Unit-modulus diagonal reference built from the pre-shared sign bits.

    Both magnitudes of a given sign share the same argument, so this
    reference carries the full phase information of the true pilots.
    """
    s = 2.0 * np.asarray(first_bits).astype(float) - 1.0
    return s * (1.0 + 1.0j) / np.sqrt(2.0)


def qpsk_training(n: int, seed: int) -> np.ndarray:
    """Deterministic unit-energy QPSK training sequence."""
    rng = np.random.Generator(np.random.Philox(seed))
    k = rng.integers(0, 4, size=n)
    return np.exp(1j * (np.pi / 4.0 + k * np.pi / 2.0))


def assemble_frame(training: np.ndarray, pilots: np.ndarray,
                   payload: np.ndarray, layout: FrameLayout) -> np.ndarray:
    """Interleave training, pilots and payload into one frame of symbols."""
    if len(training) != layout.training_len:
        raise ValueError(f"expected {layout.training_len} training symbols, "
                         f"got {len(training)}")
    if len(pilots) != layout.n_pilots:
        raise ValueError(f"expected {layout.n_pilots} pilots, got {len(pilots)}")
    if len(payload) != layout.payload_len:
        raise ValueError(f"expected {layout.payload_len} payload symbols, "
                         f"got {len(payload)}")
    frame = np.empty(layout.total_len, dtype=complex)
    frame[:layout.training_len] = training
    body = frame[layout.training_len:]
    body[layout.pilot_body_positions()] = pilots
    body[layout.payload_body_positions()] = payload
    return frame


def parse_frame(frame: np.ndarray, layout: FrameLayout
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a frame back into (training, pilots, payload)."""
    frame = np.asarray(frame)
    if len(frame) != layout.total_len:
        raise ValueError(f"expected frame of {layout.total_len} symbols, "
                         f"got {len(frame)}")
    training = frame[:layout.training_len]
    body = frame[layout.training_len:]
    return training, body[layout.pilot_body_positions()], body[layout.payload_body_positions()]


def net_rate_gbps(layout: FrameLayout, code_rate: float = LDPC_CODE_RATE,
                  line_rate_gbps: float = LINE_RATE_GBPS) -> float:
    """Net information rate after frame overhead and FEC overhead."""
    return layout.payload_len / layout.total_len * code_rate * line_rate_gbps
