import numpy as np
import pytest

from secpon import channel, framing, rxdsp, theory


def _frame_body(rng, layout, params, linewidth, snr_db, seed):
    """One impaired frame body plus the transmitted payload bits and reference."""
    n_pay_bits = layout.payload_len * 4
    pay_bits = rng.integers(0, 2, n_pay_bits).astype(np.uint8)
    first = rng.integers(0, 2, layout.n_pilots).astype(np.uint8)
    second = rng.integers(0, 2, layout.n_pilots).astype(np.uint8)
    pilots = framing.map_pilot(first, second, params)
    payload = framing.map_payload_16qam(pay_bits)
    body = np.empty(layout.body_len, dtype=complex)
    body[layout.pilot_body_positions()] = pilots
    body[layout.payload_body_positions()] = payload
    stream = framing.SymbolStream(body, 8e9)
    cfg = channel.ChannelConfig(snr_db=snr_db, linewidth_hz=linewidth, seed=seed)
    rx = channel.apply_channel(stream, cfg)
    ref = framing.pilot_phase_reference(first)
    return rx.symbols, pay_bits, ref


class TestPilotPhaseEstimates:
    def test_clean_pilots_give_zero(self):
        ref = framing.pilot_phase_reference(np.array([0, 1, 1, 0]))
        psi = rxdsp.pilot_phase_estimates(ref, ref)
        assert np.allclose(psi, 0)

    def test_constant_rotation_recovered(self):
        ref = framing.pilot_phase_reference(np.array([0, 1, 0, 1, 1]))
        psi = rxdsp.pilot_phase_estimates(ref * np.exp(0.3j), ref)
        assert np.allclose(psi, 0.3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rxdsp.pilot_phase_estimates(np.ones(3, complex), np.ones(4, complex))

    def test_unwrap_disabled_keeps_wrapped_angles(self):
        ref = np.ones(3, dtype=complex)
        rx = np.exp(1j * np.array([3.0, -3.0, 3.0]))
        raw = rxdsp.pilot_phase_estimates(rx, ref, unwrap=False)
        assert np.allclose(raw, [3.0, -3.0, 3.0])
        unwrapped = rxdsp.pilot_phase_estimates(rx, ref)
        assert np.all(np.abs(np.diff(unwrapped)) < np.pi)

    def test_tracks_wiener_walk_at_pilot_snr(self):
        # estimate = true walk + angle noise; check the noise floor matches
        rate, lw, snr_db = 8e9, 100e3, 15.0
        n = 4000
        rng = np.random.default_rng(5)
        first = rng.integers(0, 2, n).astype(np.uint8)
        pilots = framing.map_pilot(first, np.zeros(n, np.uint8),
                                   framing.GcsPilotParams(a=3.0))
        walk = channel.phase_noise_walk(n, lw, rate, seed=5)
        stream = framing.SymbolStream(pilots * np.exp(1j * walk), rate)
        rx = channel.add_awgn(stream, snr_db, seed=6)
        psi = rxdsp.pilot_phase_estimates(rx.symbols, framing.pilot_phase_reference(first))
        mse = np.mean((psi - walk) ** 2)
        # small-angle variance for unit-power pilots: half the noise power
        expected = 10 ** (-snr_db / 10) / 2
        assert 0.6 * expected < mse < 1.6 * expected


class TestInterpolateAndSmooth:
    def test_linear_ramp_is_exact(self):
        pos = np.array([0, 10, 20, 30])
        est = 0.01 * pos
        targets = np.arange(31)
        out = rxdsp.interpolate_phase(est, pos, targets, mode="linear")
        assert np.allclose(out, 0.01 * targets, atol=1e-12)

    def test_hold_keeps_previous_estimate(self):
        pos = np.array([0, 4])
        est = np.array([1.0, 2.0])
        out = rxdsp.interpolate_phase(est, pos, np.array([1, 3, 4, 6]), mode="hold")
        assert np.allclose(out, [1.0, 1.0, 2.0, 2.0])

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            rxdsp.interpolate_phase(np.zeros(2), np.array([0, 1]), np.array([0]), mode="spline")

    def test_smoothing_window_one_is_noop(self):
        x = np.array([0.4, -0.2, 0.9])
        assert np.array_equal(rxdsp.smooth_phase_estimates(x, 1), x)

    def test_smoothing_preserves_interior_of_ramp(self):
        x = np.arange(20, dtype=float) * 0.05
        y = rxdsp.smooth_phase_estimates(x, 3)
        assert np.allclose(y[1:-1], x[1:-1], atol=1e-12)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            rxdsp.smooth_phase_estimates(np.zeros(5), 4)


class TestResidualStage:
    def test_constellation_points_need_no_correction(self):
        rng = np.random.default_rng(0)
        sym = framing.map_payload_16qam(rng.integers(0, 2, 400).astype(np.uint8))
        assert np.allclose(rxdsp.residual_phase(sym), 0, atol=1e-12)

    def test_uniform_small_rotation_recovered(self):
        rng = np.random.default_rng(1)
        sym = framing.map_payload_16qam(rng.integers(0, 2, 4000).astype(np.uint8))
        est = rxdsp.residual_phase(sym * np.exp(0.05j))
        assert np.allclose(est, 0.05, atol=1e-3)

    def test_zero_passes_is_identity(self):
        sym = np.exp(0.3j) * np.ones(50, dtype=complex)
        cfg = rxdsp.CprConfig(residual_passes=0)
        assert np.array_equal(rxdsp.residual_cpr(sym, cfg), sym)


class TestRecoverCarrierPhase:
    def test_constant_phase_noiseless_is_exact(self):
        layout = framing.upstream_layout()
        params = framing.GcsPilotParams()
        rng = np.random.default_rng(2)
        body, bits, ref = _frame_body(rng, layout, params, 0.0, None, seed=3)
        body = body * np.exp(0.4j)
        out = rxdsp.recover_carrier_phase(body, layout, ref)
        got = framing.demap_payload_16qam(out.payload)
        assert np.array_equal(got, bits)
        assert out.cycle_slips == 0
        assert np.allclose(out.pilot_phase, 0.4, atol=1e-9)

    def test_zero_estimates_identity(self):
        layout = framing.upstream_layout()
        params = framing.GcsPilotParams()
        rng = np.random.default_rng(3)
        body, _, ref = _frame_body(rng, layout, params, 0.0, None, seed=4)
        pay = body[layout.payload_body_positions()]
        out = rxdsp.apply_pilot_phase(pay, np.zeros(layout.n_pilots), layout)
        assert np.allclose(out, pay)

    def test_wrong_body_length_rejected(self):
        layout = framing.upstream_layout()
        with pytest.raises(ValueError):
            rxdsp.recover_carrier_phase(np.zeros(10, complex), layout,
                                        np.zeros(layout.n_pilots, complex))

    def test_misaligned_estimates_rejected(self):
        layout = framing.upstream_layout()
        with pytest.raises(ValueError):
            rxdsp.apply_pilot_phase(np.zeros(layout.payload_len, complex),
                                    np.zeros(layout.n_pilots - 1), layout)

    def test_injected_phase_jump_is_reported_not_repaired(self):
        layout = framing.upstream_layout()
        params = framing.GcsPilotParams()
        rng = np.random.default_rng(4)
        body, _, ref = _frame_body(rng, layout, params, 0.0, None, seed=5)
        # flip the phase of the second half of the frame by a half turn
        cut = layout.pilot_body_positions()[layout.n_pilots // 2]
        body[cut:] *= np.exp(1j * np.pi * 0.9)
        out = rxdsp.recover_carrier_phase(body, layout, ref)
        assert out.cycle_slips >= 1

    def test_linewidth_tracking_beats_no_correction(self):
        layout = framing.upstream_layout()
        params = framing.GcsPilotParams()
        rng = np.random.default_rng(6)
        body, bits, ref = _frame_body(rng, layout, params, 500e3, 15.0, seed=7)
        out = rxdsp.recover_carrier_phase(body, layout, ref)
        got = framing.demap_payload_16qam(out.payload)
        raw = framing.demap_payload_16qam(body[layout.payload_body_positions()])
        assert np.mean(got != bits) < 0.25 * np.mean(raw != bits)


def _payload_errors(linewidth, snr_db, seeds, cfg, a=1.7):
    layout = framing.upstream_layout()
    params = framing.GcsPilotParams(a=a)
    errs = 0
    total = 0
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        body, bits, ref = _frame_body(rng, layout, params, linewidth, snr_db, seed)
        out = rxdsp.recover_carrier_phase(body, layout, ref, cfg)
        errs += int(np.sum(framing.demap_payload_16qam(out.payload) != bits))
        total += bits.size
    return errs, total


class TestChainProperties:
    def test_linear_interpolation_not_worse_than_hold(self):
        # 1 MHz linewidth stresses tracking between pilots
        seeds = range(8)
        lin, _ = _payload_errors(1e6, 13.0, seeds, rxdsp.CprConfig(interpolation="linear"))
        hold, _ = _payload_errors(1e6, 13.0, seeds, rxdsp.CprConfig(interpolation="hold"))
        assert lin <= hold

    def test_residual_stage_improves_on_pilot_only(self):
        seeds = range(8)
        with_res, _ = _payload_errors(100e3, 12.5, seeds, rxdsp.CprConfig())
        without, _ = _payload_errors(100e3, 12.5, seeds,
                                     rxdsp.CprConfig(residual_passes=0))
        assert with_res < without

    def test_second_residual_pass_not_worse(self):
        seeds = range(6)
        two, _ = _payload_errors(100e3, 12.5, seeds, rxdsp.CprConfig(residual_passes=2))
        one, _ = _payload_errors(100e3, 12.5, seeds, rxdsp.CprConfig(residual_passes=1))
        assert two <= one


def _apply_offset(symbols, offset_hz, rate):
    """Impose a frequency offset (inverse of the correction)."""
    return rxdsp.correct_frequency_offset(symbols, -offset_hz, rate)


class TestFrequencyOffset:
    def test_noiseless_offset_recovered_closely(self):
        rate = 8e9
        train = framing.qpsk_training(416, seed=11)
        rx = _apply_offset(train, -123.4e6, rate)
        est = rxdsp.estimate_frequency_offset(rx, train, rate)
        assert abs(est - (-123.4e6)) < 1e5

    def test_noisy_offset_within_half_percent_of_rate(self):
        rate = 8e9
        train = framing.qpsk_training(416, seed=12)
        shifted = _apply_offset(train, 200e6, rate)
        rx = channel.add_awgn(framing.SymbolStream(shifted, rate), 10.0, seed=13)
        est = rxdsp.estimate_frequency_offset(rx.symbols, train, rate)
        assert abs(est - 200e6) < 0.005 * rate

    def test_correct_then_estimate_is_zero(self):
        rate = 8e9
        train = framing.qpsk_training(256, seed=14)
        rx = rxdsp.correct_frequency_offset(train, 77e6, rate)
        fixed = rxdsp.correct_frequency_offset(rx, -77e6, rate)
        assert np.allclose(fixed, train)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rxdsp.estimate_frequency_offset(np.ones(5, complex), np.ones(6, complex), 8e9)

    def test_estimate_error_grows_no_pathology_at_band_edge(self):
        # offsets near half the padded-bin wrap point still resolve
        rate = 8e9
        train = framing.qpsk_training(416, seed=15)
        for f in (3.9e9, -3.9e9):
            rx = _apply_offset(train, f, rate)
            est = rxdsp.estimate_frequency_offset(rx, train, rate)
            assert abs(est - f) < 1e5


class TestCprConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            rxdsp.CprConfig(q=-1)
        with pytest.raises(ValueError):
            rxdsp.CprConfig(interpolation="cubic")
        with pytest.raises(ValueError):
            rxdsp.CprConfig(pilot_smoothing=2)
        with pytest.raises(ValueError):
            rxdsp.CprConfig(residual_passes=-1)
