"""OLT/ONU session machinery: key distribution over the pilot channel,
encrypted downstream broadcast, and subcarrier allocation.

Key lifecycle.  Each ONU draws its own 256-bit session key and sends it
upstream as two CRC-protected fragments riding the magnitude bits of the
shaped pilots (one polar codeword per frame, spread over the ONU's two
subcarriers).  The OLT assembles the fragments and acknowledges
implicitly: every downstream codeword starts with a one-byte control
field, inside the encrypted envelope, echoing the lowest key sequence
number the OLT holds pending.  Both ends switch to the echoed key at
the next codeword boundary, so activation stays synchronized as long as
the downstream FEC runs error-free, which is its operating point.  A
fragment that fails its CRC is simply dropped and retransmitted on the
next cadence; no activation can happen without a valid CRC on both
fragments and a decrypted echo, which is what keeps a lossy control
channel from ever desynchronizing the two stores.

The eavesdropper runs the full receive chain on the broadcast
downstream with an independently drawn key; its post-decryption bit
agreement is the security figure the reports carry.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import rxdsp
from .channel import ChannelConfig, add_awgn, apply_channel, eavesdropper_config
from .crypto import (
    KeyFragmentMessage,
    KeyStore,
    SessionKey,
    aes256_decrypt,
    aes256_encrypt,
    assemble_key,
    random_session_key,
    split_key,
)
from .dscm import DscmPlan, demux_select, mux
from .fec_ldpc import LDPC_K, default_code, ldpc_encode
from .fec_polar import KeyCodeword, PolarCode, polar_decode_scl
from .framing import (
    FrameLayout,
    GcsPilotParams,
    SymbolStream,
    assemble_frame,
    demap_payload_16qam,
    demap_pilot_llrs,
    hard_decision_16qam,
    map_payload_16qam,
    map_pilot,
    payload_llrs_16qam,
    pilot_phase_reference,
    qpsk_training,
    upstream_layout,
    downstream_layout,
)

ECHO_NONE = 255                     # control byte meaning "nothing pending"
CODEWORDS_PER_SC_PER_FRAME = 2      # 8640 payload symbols = 2 LDPC codewords
DATA_BITS_PER_CODEWORD = LDPC_K - 8  # one control byte leads each plaintext

_KEYGEN, _SIGNS, _TRAIN, _DATA, _USDATA, _PILOT2 = 11, 13, 17, 19, 23, 29
_USPHASE, _USNOISE, _DSCHAN, _LOSS, _EVEKEY = 31, 37, 41, 43, 47


def _rng(seed: int, *ids: int) -> np.random.Generator:
    sub = 0
    for x in ids:
        sub = (sub * 1000003 + x) & (2 ** 64 - 1)
    return np.random.Generator(np.random.Philox(key=np.uint64([seed & (2 ** 64 - 1), sub])))


def _stable_id(name: str) -> int:
    """Process-independent small integer for seeding per-ONU streams."""
    return zlib.crc32(name.encode())


def _child_seed(seed: int, *ids: int) -> int:
    return int(_rng(seed, *ids).integers(0, 2 ** 63))


@dataclass(frozen=True)
class TfdmaAllocation:
    """Disjoint (time slot, subcarrier) cells per ONU."""

    cells: dict[str, tuple[tuple[int, int], ...]]
    n_subcarriers: int
    time_slots: int

    def subcarriers(self, onu_id: str) -> tuple[int, ...]:
        return tuple(sorted({sc for _, sc in self.cells[onu_id]}))


def allocate_tfdma(onu_ids: list[str], n_subcarriers: int = 4,
                   time_slots: int = 1) -> TfdmaAllocation:
    """Round-robin the (slot, subcarrier) grid over the ONUs.

    Pure FDMA (one slot) hands each ONU a contiguous block of
    subcarriers; more ONUs than subcarriers needs a time-slot schedule.
    """
    if not onu_ids:
        raise ValueError("need at least one ONU")
    if len(set(onu_ids)) != len(onu_ids):
        raise ValueError("duplicate ONU ids")
    capacity = n_subcarriers * time_slots
    if len(onu_ids) > capacity:
        kind = "subcarriers" if time_slots == 1 else "grid cells"
        raise ValueError(f"{len(onu_ids)} ONUs oversubscribe {capacity} {kind}")
    cells: dict[str, list[tuple[int, int]]] = {o: [] for o in onu_ids}
    if time_slots == 1:
        share, extra = divmod(n_subcarriers, len(onu_ids))
        start = 0
        for i, onu in enumerate(onu_ids):
            stop = start + share + (1 if i < extra else 0)
            cells[onu] = [(0, sc) for sc in range(start, stop)]
            start = stop
    else:
        grid = [(slot, sc) for slot in range(time_slots) for sc in range(n_subcarriers)]
        for i, cell in enumerate(grid):
            cells[onu_ids[i % len(onu_ids)]].append(cell)
    return TfdmaAllocation(cells={o: tuple(c) for o, c in cells.items()},
                           n_subcarriers=n_subcarriers, time_slots=time_slots)


@dataclass
class OnuSession:
    """Per-ONU state shared by the upstream and downstream runners."""

    onu_id: str
    subcarriers: tuple[int, ...]
    onu_store: KeyStore
    olt_store: KeyStore
    frame_counter: int = 0
    direction_state: str = "idle"
    next_seq: int = 1
    codeword_counter: int = 0
    current_key: SessionKey | None = None
    tx_fragments: tuple[KeyFragmentMessage, KeyFragmentMessage] | None = None
    tx_phase: int = 0
    expected_seq: int = 1
    rx_fragments: dict[int, KeyFragmentMessage] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.subcarriers = tuple(sorted(self.subcarriers))
        if not self.subcarriers:
            raise ValueError("session needs at least one subcarrier")

    @property
    def key_subcarriers(self) -> tuple[int, ...]:
        """The (up to two) subcarriers whose pilots carry key fragments."""
        return self.subcarriers[:2]


def make_sessions(allocation: TfdmaAllocation | dict[str, tuple[int, ...]],
                  seed: int = 0) -> list[OnuSession]:
    """Build sessions from an allocation and provision the initial key.

    Sequence 0 is the pre-shared registration key, active from codeword 0
    on both sides; in-session distribution starts at sequence 1.
    """
    if isinstance(allocation, TfdmaAllocation):
        sc_map = {o: allocation.subcarriers(o) for o in allocation.cells}
    else:
        sc_map = {o: tuple(sorted(s)) for o, s in allocation.items()}
    seen: set[int] = set()
    for scs in sc_map.values():
        if seen & set(scs):
            raise ValueError("subcarrier sets overlap across ONUs")
        seen |= set(scs)
    sessions = []
    for i, (onu_id, scs) in enumerate(sc_map.items()):
        bits = _rng(seed, _KEYGEN, i, 0).integers(0, 2, 256).astype(np.uint8)
        session = OnuSession(onu_id=onu_id, subcarriers=scs,
                            onu_store=KeyStore("downstream"),
                            olt_store=KeyStore("downstream"))
        for store in (session.onu_store, session.olt_store):
            store.add_pending(SessionKey(bits=bits.copy(), seq=0))
            store.activate(0, codeword_index=0)
        sessions.append(session)
    return sessions


def active_keys_synchronized(sessions: list[OnuSession]) -> bool:
    """True when OLT and ONU agree on the active key of every session."""
    for s in sessions:
        olt, onu = s.olt_store.active_key, s.onu_store.active_key
        if olt is None or onu is None:
            return False
        if olt.seq != onu.seq or not np.array_equal(olt.bits, onu.bits):
            return False
    return True


@dataclass
class FrameMetrics:
    frame_index: int
    direction: str
    onu_id: str
    sc_index: int
    pre_bits: int
    pre_errors: int
    post_bits: int
    post_errors: int
    cycle_slips: int


@dataclass
class KeyEventRecord:
    frame_index: int
    onu_id: str
    event: str
    seq: int
    detail: str = ""


@dataclass
class SessionReport:
    """Counters and per-frame metrics from one protocol run."""

    direction: str
    n_frames: int = 0
    frame_metrics: list[FrameMetrics] = field(default_factory=list)
    key_events: list[KeyEventRecord] = field(default_factory=list)
    pre_bits_transmitted: int = 0
    post_bits_transmitted: int = 0
    crc_failures: int = 0
    fragments_lost: int = 0
    keys_assembled: int = 0
    key_mismatches: int = 0
    rotations: int = 0
    eavesdropper_bits: int = 0
    eavesdropper_errors: int = 0

    def pre_fec_ber(self) -> float:
        bits = sum(m.pre_bits for m in self.frame_metrics)
        return sum(m.pre_errors for m in self.frame_metrics) / bits if bits else float("nan")

    def post_fec_ber(self) -> float:
        bits = sum(m.post_bits for m in self.frame_metrics)
        return sum(m.post_errors for m in self.frame_metrics) / bits if bits else float("nan")

    def eavesdropper_agreement(self) -> float:
        if not self.eavesdropper_bits:
            return float("nan")
        return 1.0 - self.eavesdropper_errors / self.eavesdropper_bits

    def per_sc_summary(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for sc in sorted({m.sc_index for m in self.frame_metrics}):
            rows = [m for m in self.frame_metrics if m.sc_index == sc]
            pre = sum(m.pre_bits for m in rows)
            post = sum(m.post_bits for m in rows)
            out[sc] = {
                "pre_fec_ber": sum(m.pre_errors for m in rows) / pre if pre else float("nan"),
                "post_fec_ber": sum(m.post_errors for m in rows) / post if post else float("nan"),
                "cycle_slips": float(sum(m.cycle_slips for m in rows)),
            }
        return out

    def validate(self) -> None:
        """Every transmitted bit must have been compared exactly once."""
        pre = sum(m.pre_bits for m in self.frame_metrics)
        post = sum(m.post_bits for m in self.frame_metrics)
        if pre != self.pre_bits_transmitted or post != self.post_bits_transmitted:
            raise AssertionError(
                f"compared {pre}/{post} bits but transmitted "
                f"{self.pre_bits_transmitted}/{self.post_bits_transmitted}")

    def merge(self, other: "SessionReport") -> None:
        self.n_frames = max(self.n_frames, other.n_frames)
        self.frame_metrics += other.frame_metrics
        self.key_events += other.key_events
        for name in ("pre_bits_transmitted", "post_bits_transmitted", "crc_failures",
                     "fragments_lost", "keys_assembled", "key_mismatches", "rotations",
                     "eavesdropper_bits", "eavesdropper_errors"):
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def to_json(self) -> str:
        def clean(x: float) -> float | None:
            return None if np.isnan(x) else x
        doc = {
            "direction": self.direction,
            "n_frames": self.n_frames,
            "pre_fec_ber": clean(self.pre_fec_ber()),
            "post_fec_ber": clean(self.post_fec_ber()),
            "crc_failures": self.crc_failures,
            "fragments_lost": self.fragments_lost,
            "keys_assembled": self.keys_assembled,
            "key_mismatches": self.key_mismatches,
            "rotations": self.rotations,
            "eavesdropper_bits": self.eavesdropper_bits,
            "eavesdropper_agreement": clean(self.eavesdropper_agreement()),
            "per_sc": {str(k): v for k, v in self.per_sc_summary().items()},
            "key_events": [
                {"frame": e.frame_index, "onu": e.onu_id, "event": e.event,
                 "seq": e.seq, "detail": e.detail}
                for e in self.key_events
            ],
        }
        return json.dumps(doc, indent=2, allow_nan=True)

    def to_csv(self) -> str:
        lines = ["frame,direction,onu,sc,pre_bits,pre_errors,post_bits,post_errors,cycle_slips"]
        for m in self.frame_metrics:
            lines.append(f"{m.frame_index},{m.direction},{m.onu_id},{m.sc_index},"
                         f"{m.pre_bits},{m.pre_errors},{m.post_bits},{m.post_errors},"
                         f"{m.cycle_slips}")
        return "\n".join(lines) + "\n"


def _echo_bits(value: int) -> np.ndarray:
    return np.array([(value >> (7 - i)) & 1 for i in range(8)], dtype=np.uint8)


def _echo_value(bits: np.ndarray) -> int:
    return int(np.packbits(np.asarray(bits).astype(np.uint8)[:8])[0])


def _pilot_sign_bits(seed: int, frame: int, sc: int, n: int) -> np.ndarray:
    return _rng(seed, _SIGNS, frame, sc).integers(0, 2, n).astype(np.uint8)


def _estimate_noise_var(payload: np.ndarray) -> float:
    resid = payload - hard_decision_16qam(payload)
    return max(float(np.mean(np.abs(resid) ** 2)), 1e-12)


def _receive_sc(rx_frame: np.ndarray, layout: FrameLayout, seed: int, frame: int,
                sc: int, pilot_params: GcsPilotParams, cpr_cfg) -> rxdsp.CprResult:
    signs = _pilot_sign_bits(seed, frame, sc, layout.n_pilots)
    body = rx_frame[layout.training_len:]
    return rxdsp.recover_carrier_phase(body, layout, pilot_phase_reference(signs), cpr_cfg)


def _correct_onu_offset(aggregate: SymbolStream, session: OnuSession,
                        layout: FrameLayout, plan: DscmPlan, seed: int,
                        frame: int) -> SymbolStream:
    """Estimate the ONU's carrier offset on one training prefix and
    derotate the aggregate before selecting its subcarriers."""
    sc = session.subcarriers[0]
    coarse = demux_select(aggregate, sc, plan)
    train = qpsk_training(layout.training_len, _child_seed(seed, _TRAIN, frame, sc))
    est = rxdsp.estimate_frequency_offset(
        coarse.symbols[:layout.training_len], train, plan.baud_per_sc)
    fixed = rxdsp.correct_frequency_offset(
        aggregate.symbols, est, plan.sample_rate_hz)
    return SymbolStream(fixed, aggregate.symbol_rate_hz)


def _check_pilot_budget(sessions: list[OnuSession], layout: FrameLayout,
                        code: PolarCode) -> None:
    for s in sessions:
        budget = layout.n_pilots * len(s.key_subcarriers)
        if budget < code.block_length:
            raise ValueError(
                f"{s.onu_id}: pilot budget {budget} cannot carry "
                f"{code.block_length} coded key bits per frame")


def _start_fragment_cycle(session: OnuSession, seed: int, frame: int,
                          report: SessionReport) -> None:
    if session.current_key is None or session.current_key.state != "pending":
        key = random_session_key(
            session.next_seq,
            _rng(seed, _KEYGEN, _stable_id(session.onu_id), session.next_seq, 1))
        session.onu_store.add_pending(key)
        session.current_key = key
        session.tx_fragments = split_key(key.bits, key.seq)
        session.tx_phase = 0
        session.next_seq += 1
        report.key_events.append(KeyEventRecord(frame, session.onu_id,
                                                "key_generated", key.seq))


def run_upstream_keydist(sessions: list[OnuSession], cfg: ChannelConfig,
                         n_frames: int, *, seed: int = 0,
                         pilot_params: GcsPilotParams | None = None,
                         cpr_cfg: rxdsp.CprConfig | None = None,
                         plan: DscmPlan | None = None,
                         loss_probability: float = 0.0,
                         decode_payload: bool = False) -> SessionReport:
    """Distribute session keys upstream over the pilot magnitude bits.

    Every frame each ONU sends one polar-coded key fragment across its
    two key subcarriers, plus regular 16QAM payload.  Each ONU's burst
    passes through its own laser's phase-noise channel; the bursts sum
    at the OLT where a single noise loading applies.  Assembly is
    CRC-gated and activation here models an out-of-band acknowledgment:
    both stores switch at the frame boundary after assembly (the in-band
    echo path lives in the downstream runner).
    """
    pilot_params = pilot_params or GcsPilotParams()
    plan = plan or DscmPlan()
    layout = upstream_layout()
    polar = PolarCode()
    ldpc = default_code()
    _check_pilot_budget(sessions, layout, polar)
    report = SessionReport(direction="upstream", n_frames=n_frames)

    for f in range(n_frames):
        tx_coded: dict[tuple[str, int], np.ndarray] = {}
        onu_waves = []
        for idx, session in enumerate(sessions):
            _start_fragment_cycle(session, seed, f, report)
            fragment = session.tx_fragments[session.tx_phase]
            coded = KeyCodeword.from_payload(fragment.to_bits(), polar).coded_bits
            budget = layout.n_pilots * len(session.key_subcarriers)
            key_bits = np.concatenate([coded, np.zeros(budget - coded.size, dtype=np.uint8)])
            report.key_events.append(KeyEventRecord(
                f, session.onu_id, "fragment_sent", fragment.seq,
                f"index={fragment.fragment_index}"))

            streams = [SymbolStream(np.zeros(layout.total_len, dtype=complex),
                                    plan.baud_per_sc) for _ in range(plan.n_subcarriers)]
            for sc in session.subcarriers:
                signs = _pilot_sign_bits(seed, f, sc, layout.n_pilots)
                if sc in session.key_subcarriers:
                    j = session.key_subcarriers.index(sc)
                    second = key_bits[j * layout.n_pilots:(j + 1) * layout.n_pilots]
                else:
                    second = _rng(seed, _PILOT2, f, sc).integers(
                        0, 2, layout.n_pilots).astype(np.uint8)
                pilots = map_pilot(signs, second, pilot_params)
                if decode_payload:
                    info = _rng(seed, _USDATA, idx, f, sc).integers(
                        0, 2, (CODEWORDS_PER_SC_PER_FRAME, LDPC_K)).astype(np.uint8)
                    coded_payload = np.concatenate([ldpc_encode(row, ldpc) for row in info])
                else:
                    coded_payload = _rng(seed, _USDATA, idx, f, sc).integers(
                        0, 2, 4 * layout.payload_len).astype(np.uint8)
                tx_coded[(session.onu_id, sc)] = coded_payload
                train = qpsk_training(layout.training_len, _child_seed(seed, _TRAIN, f, sc))
                frame_syms = assemble_frame(train, pilots,
                                            map_payload_16qam(coded_payload), layout)
                streams[sc] = SymbolStream(frame_syms, plan.baud_per_sc)
                report.pre_bits_transmitted += coded_payload.size
            onu_cfg = ChannelConfig(snr_db=None, linewidth_hz=cfg.linewidth_hz,
                                    freq_offset_hz=cfg.freq_offset_hz,
                                    seed=_child_seed(cfg.seed, _USPHASE, f, idx))
            onu_waves.append(apply_channel(mux(streams, plan), onu_cfg))

        total = SymbolStream(np.sum([w.symbols for w in onu_waves], axis=0),
                             plan.sample_rate_hz)
        if cfg.snr_db is not None:
            total = add_awgn(total, cfg.snr_db, seed=_child_seed(cfg.seed, _USNOISE, f))

        for idx, session in enumerate(sessions):
            work = total
            if cfg.freq_offset_hz:
                work = _correct_onu_offset(total, session, layout, plan, seed, f)
            llr_chunks = []
            for sc in session.subcarriers:
                rx_frame = demux_select(work, sc, plan).symbols
                result = _receive_sc(rx_frame, layout, seed, f, sc, pilot_params, cpr_cfg)
                noise_var = _estimate_noise_var(result.payload)
                hard = demap_payload_16qam(result.payload)
                truth = tx_coded[(session.onu_id, sc)]
                pre_errors = int(np.sum(hard != truth))
                post_bits = post_errors = 0
                if decode_payload:
                    llrs = payload_llrs_16qam(result.payload, noise_var)
                    info_truth = _rng(seed, _USDATA, idx, f, sc).integers(
                        0, 2, (CODEWORDS_PER_SC_PER_FRAME, LDPC_K)).astype(np.uint8)
                    hard_cw, _, _ = ldpc.decode_batch(
                        llrs.reshape(CODEWORDS_PER_SC_PER_FRAME, -1))
                    post_errors = int(np.sum(hard_cw[:, :LDPC_K] != info_truth))
                    post_bits = info_truth.size
                    report.post_bits_transmitted += post_bits
                report.frame_metrics.append(FrameMetrics(
                    f, "us", session.onu_id, sc, truth.size, pre_errors,
                    post_bits, post_errors, result.cycle_slips))
                if sc in session.key_subcarriers:
                    llr_chunks.append(demap_pilot_llrs(result.pilots, pilot_params,
                                                       noise_var))
            _receive_fragment(session, np.concatenate(llr_chunks)[:polar.block_length],
                              polar, f, seed, loss_probability, report)
            _ideal_ack_activation(session, session.codeword_counter, f, report)
            session.frame_counter += 1
            session.direction_state = "upstream"
        report.n_frames = f + 1
    report.validate()
    return report


def _receive_fragment(session: OnuSession, llrs: np.ndarray, polar: PolarCode,
                      frame: int, seed: int, loss_probability: float,
                      report: SessionReport) -> None:
    """CRC-gated fragment intake on the OLT side of one session."""
    if loss_probability and _rng(seed, _LOSS, frame, _stable_id(session.onu_id)
                                 ).random() < loss_probability:
        report.fragments_lost += 1
        report.key_events.append(KeyEventRecord(frame, session.onu_id,
                                                "fragment_lost", session.expected_seq))
    else:
        payload, crc_ok = polar_decode_scl(llrs, polar)
        if not crc_ok:
            report.crc_failures += 1
            report.key_events.append(KeyEventRecord(frame, session.onu_id,
                                                    "fragment_crc_fail",
                                                    session.expected_seq))
        else:
            try:
                msg = KeyFragmentMessage.from_bits(payload)
            except ValueError:
                report.crc_failures += 1
                report.key_events.append(KeyEventRecord(
                    frame, session.onu_id, "fragment_malformed", session.expected_seq))
            else:
                if msg.seq == session.expected_seq:
                    session.rx_fragments[msg.fragment_index] = msg
                elif msg.seq < session.expected_seq:
                    report.key_events.append(KeyEventRecord(
                        frame, session.onu_id, "fragment_stale", msg.seq))
                else:
                    report.key_events.append(KeyEventRecord(
                        frame, session.onu_id, "fragment_unexpected_seq", msg.seq))
    if len(session.rx_fragments) == 2:
        key = assemble_key(session.rx_fragments[0], session.rx_fragments[1])
        session.rx_fragments.clear()
        report.keys_assembled += 1
        if not np.array_equal(key.bits, session.current_key.bits):
            report.key_mismatches += 1
            report.key_events.append(KeyEventRecord(frame, session.onu_id,
                                                    "key_mismatch", key.seq))
        session.olt_store.add_pending(key)
        session.expected_seq += 1
        report.key_events.append(KeyEventRecord(frame, session.onu_id,
                                                "key_assembled", key.seq))
    else:
        # cadence over with fragments missing: resend the pair
        if session.tx_phase == 1:
            session.tx_phase = 0
        else:
            session.tx_phase = 1


def _ideal_ack_activation(session: OnuSession, boundary: int, frame: int,
                          report: SessionReport) -> None:
    pending = session.olt_store.pending_seqs()
    if not pending:
        return
    seq = pending[0]
    session.olt_store.activate(seq, boundary)
    session.onu_store.activate(seq, boundary)
    report.rotations += 1
    report.key_events.append(KeyEventRecord(frame, session.onu_id, "key_activated",
                                            seq, f"codeword={boundary}"))


def run_downstream_encrypted(sessions: list[OnuSession], cfg: ChannelConfig,
                             n_frames: int, *, seed: int = 0,
                             pilot_params: GcsPilotParams | None = None,
                             cpr_cfg: rxdsp.CprConfig | None = None,
                             plan: DscmPlan | None = None,
                             eavesdropper: bool = False) -> SessionReport:
    """Broadcast AES-encrypted payload downstream and decode per ONU.

    Requires an active key on both stores of every session.  Pending
    keys (delivered by the upstream runner) are announced through the
    in-band echo byte and activated mid-run at the following codeword
    boundary on both sides.
    """
    for s in sessions:
        if s.olt_store.active_key is None or s.onu_store.active_key is None:
            raise ValueError(f"{s.onu_id}: downstream needs an active key on both sides")
    pilot_params = pilot_params or GcsPilotParams()
    plan = plan or DscmPlan()
    layout = downstream_layout()
    report = SessionReport(direction="downstream", n_frames=n_frames)
    for f in range(n_frames):
        _downstream_frame(sessions, cfg, f, seed, pilot_params, cpr_cfg, plan,
                          layout, eavesdropper, report)
        report.n_frames = f + 1
    report.validate()
    return report


def _downstream_frame(sessions, cfg, f, seed, pilot_params, cpr_cfg, plan,
                      layout, eavesdropper, report) -> None:
    ldpc = default_code()
    tx_coded: dict[tuple[str, int], np.ndarray] = {}
    tx_cipher_truth: dict[int, np.ndarray] = {}
    streams = [SymbolStream(np.zeros(layout.total_len, dtype=complex), plan.baud_per_sc)
               for _ in range(plan.n_subcarriers)]

    for session in sessions:
        payload_syms = {sc: [] for sc in session.subcarriers}
        for sc in session.subcarriers:
            for _ in range(CODEWORDS_PER_SC_PER_FRAME):
                c = session.codeword_counter
                pending = session.olt_store.pending_seqs()
                echo = pending[0] if pending else ECHO_NONE
                data = _rng(seed, _DATA, _stable_id(session.onu_id), c).integers(
                    0, 2, DATA_BITS_PER_CODEWORD).astype(np.uint8)
                plain = np.concatenate([_echo_bits(echo), data])
                key = session.olt_store.consume(c)
                cipher = aes256_encrypt(plain, key, c)
                tx_cipher_truth[c] = cipher
                coded = ldpc_encode(cipher, ldpc)
                tx_coded.setdefault((session.onu_id, sc), []).append(coded)
                payload_syms[sc].append(map_payload_16qam(coded))
                report.pre_bits_transmitted += coded.size
                report.post_bits_transmitted += data.size
                session.codeword_counter += 1
                if echo != ECHO_NONE:
                    session.olt_store.activate(echo, c + 1)
                    report.key_events.append(KeyEventRecord(
                        f, session.onu_id, "olt_activated", echo, f"codeword={c + 1}"))
        for sc in session.subcarriers:
            signs = _pilot_sign_bits(seed, f, sc, layout.n_pilots)
            second = _rng(seed, _PILOT2, f, sc).integers(0, 2, layout.n_pilots).astype(np.uint8)
            pilots = map_pilot(signs, second, pilot_params)
            train = qpsk_training(layout.training_len, _child_seed(seed, _TRAIN, f, sc))
            frame_syms = assemble_frame(train, pilots,
                                        np.concatenate(payload_syms[sc]), layout)
            streams[sc] = SymbolStream(frame_syms, plan.baud_per_sc)

    clean = mux(streams, plan)
    frame_cfg = ChannelConfig(snr_db=cfg.snr_db, linewidth_hz=cfg.linewidth_hz,
                              freq_offset_hz=cfg.freq_offset_hz,
                              seed=_child_seed(cfg.seed, _DSCHAN, f))
    rx = apply_channel(clean, frame_cfg)

    cw_base = {s.onu_id: s.codeword_counter - CODEWORDS_PER_SC_PER_FRAME
               * len(s.subcarriers) for s in sessions}
    for session in sessions:
        work = rx
        if cfg.freq_offset_hz:
            work = _correct_onu_offset(rx, session, layout, plan, seed, f)
        c = cw_base[session.onu_id]
        for sc in session.subcarriers:
            rx_frame = demux_select(work, sc, plan).symbols
            result = _receive_sc(rx_frame, layout, seed, f, sc, pilot_params, cpr_cfg)
            noise_var = _estimate_noise_var(result.payload)
            truth = np.concatenate(tx_coded[(session.onu_id, sc)])
            pre_errors = int(np.sum(demap_payload_16qam(result.payload) != truth))
            llrs = payload_llrs_16qam(result.payload, noise_var)
            hard_cw, _, _ = ldpc.decode_batch(llrs.reshape(CODEWORDS_PER_SC_PER_FRAME, -1))
            post_errors = 0
            for row in hard_cw[:, :LDPC_K].astype(np.uint8):
                key = session.onu_store.consume(c)
                plain = aes256_decrypt(row, key, c)
                echo = _echo_value(plain[:8])
                data_truth = _rng(seed, _DATA, _stable_id(session.onu_id), c).integers(
                    0, 2, DATA_BITS_PER_CODEWORD).astype(np.uint8)
                post_errors += int(np.sum(plain[8:] != data_truth))
                if echo != ECHO_NONE and echo in session.onu_store.pending_seqs():
                    session.onu_store.activate(echo, c + 1)
                    report.rotations += 1
                    report.key_events.append(KeyEventRecord(
                        f, session.onu_id, "onu_activated", echo, f"codeword={c + 1}"))
                c += 1
            report.frame_metrics.append(FrameMetrics(
                f, "ds", session.onu_id, sc, truth.size, pre_errors,
                hard_cw.shape[0] * DATA_BITS_PER_CODEWORD, post_errors,
                result.cycle_slips))
        session.frame_counter += 1
        session.direction_state = "downstream"

    if eavesdropper:
        _eavesdrop_frame(sessions, clean, frame_cfg, f, seed, pilot_params,
                         cpr_cfg, plan, layout, tx_cipher_truth, cw_base, report)


def _eavesdrop_frame(sessions, clean, frame_cfg, f, seed, pilot_params, cpr_cfg,
                     plan, layout, tx_cipher_truth, cw_base, report) -> None:
    """Run the full legitimate DSP on an independent tap, then decrypt
    with a key the eavesdropper made up."""
    ldpc = default_code()
    rx = apply_channel(clean, eavesdropper_config(frame_cfg))
    eve_key = SessionKey(bits=_rng(seed, _EVEKEY, 0).integers(0, 2, 256).astype(np.uint8),
                         seq=254, state="active")
    for session in sessions:
        work = rx
        if frame_cfg.freq_offset_hz:
            work = _correct_onu_offset(rx, session, layout, plan, seed, f)
        c = cw_base[session.onu_id]
        for sc in session.subcarriers:
            rx_frame = demux_select(work, sc, plan).symbols
            result = _receive_sc(rx_frame, layout, seed, f, sc, pilot_params, cpr_cfg)
            llrs = payload_llrs_16qam(result.payload, _estimate_noise_var(result.payload))
            hard_cw, _, _ = ldpc.decode_batch(llrs.reshape(CODEWORDS_PER_SC_PER_FRAME, -1))
            for row in hard_cw[:, :LDPC_K].astype(np.uint8):
                plain_eve = aes256_decrypt(row, eve_key, c)
                data_truth = _rng(seed, _DATA, _stable_id(session.onu_id), c).integers(
                    0, 2, DATA_BITS_PER_CODEWORD).astype(np.uint8)
                report.eavesdropper_bits += DATA_BITS_PER_CODEWORD
                report.eavesdropper_errors += int(np.sum(plain_eve[8:] != data_truth))
                c += 1


def run_secure_session(sessions: list[OnuSession], us_cfg: ChannelConfig,
                       ds_cfg: ChannelConfig, n_superframes: int, *,
                       seed: int = 0, pilot_params: GcsPilotParams | None = None,
                       cpr_cfg: rxdsp.CprConfig | None = None,
                       plan: DscmPlan | None = None,
                       loss_probability: float = 0.0,
                       eavesdropper: bool = False,
                       check_sync: bool = True) -> SessionReport:
    """Alternate upstream key distribution with encrypted downstream.

    Unlike the upstream-only runner, activation happens exclusively
    through the in-band echo: the OLT announces an assembled key in the
    next downstream codeword and both stores rotate at the boundary
    after it.  With ``check_sync`` the run asserts OLT and ONU agree on
    the active key after every superframe.
    """
    pilot_params = pilot_params or GcsPilotParams()
    plan = plan or DscmPlan()
    us_layout = upstream_layout()
    ds_layout = downstream_layout()
    polar = PolarCode()
    _check_pilot_budget(sessions, us_layout, polar)
    report = SessionReport(direction="secure-session", n_frames=n_superframes)

    for f in range(n_superframes):
        _upstream_keydist_frame(sessions, us_cfg, f, seed, pilot_params, cpr_cfg,
                                plan, us_layout, polar, loss_probability, report)
        _downstream_frame(sessions, ds_cfg, f, seed, pilot_params, cpr_cfg, plan,
                          ds_layout, eavesdropper, report)
        if check_sync and not active_keys_synchronized(sessions):
            raise AssertionError(f"active keys desynchronized after superframe {f}")
        report.n_frames = f + 1
    report.validate()
    return report


def _upstream_keydist_frame(sessions, cfg, f, seed, pilot_params, cpr_cfg, plan,
                            layout, polar, loss_probability, report) -> None:
    """Control-channel half of one superframe: fragments only, no
    payload accounting, activation deferred to the downstream echo."""
    onu_waves = []
    for idx, session in enumerate(sessions):
        _start_fragment_cycle(session, seed, f, report)
        fragment = session.tx_fragments[session.tx_phase]
        coded = KeyCodeword.from_payload(fragment.to_bits(), polar).coded_bits
        budget = layout.n_pilots * len(session.key_subcarriers)
        key_bits = np.concatenate([coded, np.zeros(budget - coded.size, dtype=np.uint8)])
        report.key_events.append(KeyEventRecord(
            f, session.onu_id, "fragment_sent", fragment.seq,
            f"index={fragment.fragment_index}"))
        streams = [SymbolStream(np.zeros(layout.total_len, dtype=complex),
                                plan.baud_per_sc) for _ in range(plan.n_subcarriers)]
        for j, sc in enumerate(session.key_subcarriers):
            signs = _pilot_sign_bits(seed, f, sc, layout.n_pilots)
            second = key_bits[j * layout.n_pilots:(j + 1) * layout.n_pilots]
            pilots = map_pilot(signs, second, pilot_params)
            coded_payload = _rng(seed, _USDATA, 0, f, sc).integers(
                0, 2, 4 * layout.payload_len).astype(np.uint8)
            train = qpsk_training(layout.training_len, _child_seed(seed, _TRAIN, f, sc))
            streams[sc] = SymbolStream(
                assemble_frame(train, pilots, map_payload_16qam(coded_payload), layout),
                plan.baud_per_sc)
        onu_cfg = ChannelConfig(snr_db=None, linewidth_hz=cfg.linewidth_hz,
                                freq_offset_hz=cfg.freq_offset_hz,
                                seed=_child_seed(cfg.seed, _USPHASE, f, idx))
        onu_waves.append(apply_channel(mux(streams, plan), onu_cfg))
    total = SymbolStream(np.sum([w.symbols for w in onu_waves], axis=0),
                         plan.sample_rate_hz)
    if cfg.snr_db is not None:
        total = add_awgn(total, cfg.snr_db, seed=_child_seed(cfg.seed, _USNOISE, f))
    for session in sessions:
        work = total
        if cfg.freq_offset_hz:
            work = _correct_onu_offset(total, session, layout, plan, seed, f)
        llr_chunks = []
        for sc in session.key_subcarriers:
            rx_frame = demux_select(work, sc, plan).symbols
            result = _receive_sc(rx_frame, layout, seed, f, sc, pilot_params, cpr_cfg)
            llr_chunks.append(demap_pilot_llrs(result.pilots, pilot_params,
                                               _estimate_noise_var(result.payload)))
        _receive_fragment(session, np.concatenate(llr_chunks)[:polar.block_length],
                          polar, f, seed, loss_probability, report)
        session.frame_counter += 1
        session.direction_state = "upstream"
