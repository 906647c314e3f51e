from pathlib import Path

import numpy as np
import pytest

from sbcodec.entropy_codec import (
    HEADER_SIZE,
    BadMagicError,
    BadVersionError,
    BinaryContextModel,
    Bitstream,
    ContextId,
    HeaderFieldError,
    N_MODELS,
    RangeDecoder,
    RangeEncoder,
    TruncatedStreamError,
    actual_bpp,
    decode,
    encode,
    refinement_context,
    significance_context,
    trace_bits,
)
from sbcodec.quantizer import QuantIndices

GOLDEN = Path(__file__).parent / "golden"


def random_indices(rng, h, w, c, b) -> QuantIndices:
    return QuantIndices(rng.integers(0, 1 << b, size=(h, w, c), dtype=np.int32), b)


def encode_via_reference(q: QuantIndices) -> tuple[bytes, float]:
    """Pure-Python mirror of the tensor encoder, for cross-checking."""
    enc = RangeEncoder()
    models = None
    prev_channel = -1
    for ev in trace_bits(q):
        if ev.channel != prev_channel:
            models = [BinaryContextModel() for _ in range(N_MODELS)]
            prev_channel = ev.channel
        enc.code_bit(models[ev.ctx.model_index], ev.bit)
    return enc.finish(), enc.cost_bits


class TestContextFormation:
    def test_all_insignificant(self):
        state = np.zeros((3, 3), bool)
        assert significance_context(state, (1, 1)).value == 0

    def test_single_neighbors(self):
        # Up/left/right/down map to 8/4/2/1.
        for (dy, dx), expected in [((-1, 0), 8), ((0, -1), 4), ((0, 1), 2), ((1, 0), 1)]:
            state = np.zeros((3, 3), bool)
            state[1 + dy, 1 + dx] = True
            assert significance_context(state, (1, 1)).value == expected

    def test_corner_ignores_out_of_bounds(self):
        state = np.ones((3, 3), bool)
        # At (0, 0) only right and down exist.
        assert significance_context(state, (0, 0)).value == 2 + 1

    def test_diagonals_do_not_count(self):
        state = np.zeros((3, 3), bool)
        state[0, 0] = state[0, 2] = state[2, 0] = state[2, 2] = True
        assert significance_context(state, (1, 1)).value == 0

    def test_refinement_zero(self):
        z = np.zeros((3, 3), np.uint8)
        assert refinement_context(z, z, (1, 1)).value == 0

    def test_refinement_documented_case(self):
        # prev (B, D, E, F) = (1, 1, 0, 1), cur (A, B, C, D) = (1, 0, 0, 0).
        prev = np.zeros((3, 3), np.uint8)
        prev[0, 1] = 1  # B
        prev[1, 0] = 1  # D
        prev[2, 1] = 1  # F
        cur = np.zeros((3, 3), np.uint8)
        cur[0, 0] = 1  # A
        assert refinement_context(prev, cur, (1, 1)).value == 4

    def test_refinement_all_ones(self):
        o = np.ones((3, 3), np.uint8)
        assert refinement_context(o, o, (1, 1)).value == 8

    def test_context_id_ranges(self):
        with pytest.raises(ValueError):
            ContextId("significance", 16)
        with pytest.raises(ValueError):
            ContextId("refinement", 9)
        assert ContextId("refinement", 3).model_index == 19


class TestBinaryContextModel:
    def test_fresh_model_is_symmetric(self):
        assert BinaryContextModel().prob_one() == 1 << 15

    def test_counts_track_bits(self):
        m = BinaryContextModel()
        for _ in range(9):
            m.update(1)
        assert (m.c0, m.c1) == (1, 10)
        assert m.prob_one() == (10 << 16) // 11

    def test_rescale_halves_rounding_up(self):
        m = BinaryContextModel(c0=1022, c1=1)
        m.update(0)  # counts reach 1024 -> halve, rounding up, min 1
        assert (m.c0, m.c1) == (512, 1)
        m2 = BinaryContextModel(c0=1020, c1=3)
        m2.update(0)
        assert (m2.c0, m2.c1) == (511, 2)
        assert m2.c0 + m2.c1 <= 1024


class TestRangeCoder:
    def test_round_trip_random_probabilities(self):
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, 5000).tolist()
        ctxs = rng.integers(0, 4, 5000).tolist()
        enc = RangeEncoder()
        models = [BinaryContextModel() for _ in range(4)]
        for c, b in zip(ctxs, bits):
            enc.code_bit(models[c], b)
        payload = enc.finish()
        dec = RangeDecoder(payload)
        models = [BinaryContextModel() for _ in range(4)]
        out = [dec.decode_bit(models[c]) for c in ctxs]
        assert out == bits

    def test_skewed_source_compresses(self):
        rng = np.random.default_rng(1)
        bits = (rng.random(20000) < 0.05).astype(int).tolist()
        enc = RangeEncoder()
        m = BinaryContextModel()
        for b in bits:
            enc.code_bit(m, b)
        payload = enc.finish()
        assert len(payload) < 20000 / 8 * 0.5

    def test_cost_bound_any_sequence(self):
        # Payload never exceeds the coder's own -log2 probability sum
        # plus 64 bits, even on adversarial inputs.
        for pattern in ("random", "alternating", "worst"):
            rng = np.random.default_rng(2)
            if pattern == "random":
                bits = rng.integers(0, 2, 30000).tolist()
            elif pattern == "alternating":
                bits = [i & 1 for i in range(30000)]
            else:
                bits = ([0] * 880 + [1] * 120) * 25
            enc = RangeEncoder()
            m = BinaryContextModel()
            for b in bits:
                enc.code_bit(m, b)
            payload = enc.finish()
            assert len(payload) * 8 <= enc.cost_bits + 64, pattern

    def test_truncated_stream_raises(self):
        enc = RangeEncoder()
        m = BinaryContextModel()
        for b in [1, 0] * 100:
            enc.code_bit(m, b)
        payload = enc.finish()
        dec = RangeDecoder(payload[: len(payload) // 4])
        m = BinaryContextModel()
        with pytest.raises(TruncatedStreamError):
            for _ in range(200):
                dec.decode_bit(m)


class TestTensorCodec:
    def test_round_trip_small_shapes(self):
        rng = np.random.default_rng(3)
        for h, w, c, b in [(1, 1, 1, 1), (1, 17, 1, 8), (17, 1, 16, 3), (5, 4, 4, 6)]:
            q = random_indices(rng, h, w, c, b)
            out = decode(encode(q))
            np.testing.assert_array_equal(out.indices, q.indices)
            assert out.b == q.b

    def test_minimal_one_bit(self):
        q = QuantIndices(np.ones((1, 1, 1), np.int32), 1)
        out = decode(encode(q))
        assert out.indices[0, 0, 0] == 1

    def test_kernel_matches_reference_coder(self):
        # The numba path and the readable reference must be byte-identical.
        rng = np.random.default_rng(4)
        for _ in range(10):
            h, w = rng.integers(1, 13, 2)
            c = int(rng.choice([1, 3, 8]))
            b = int(rng.integers(1, 7))
            q = random_indices(rng, h, w, c, b)
            bs = encode(q)
            ref_payload, ref_cost = encode_via_reference(q)
            assert bs.payload == ref_payload
            assert bs.model_bits == pytest.approx(ref_cost, abs=1e-6)

    def test_all_zero_tensor_is_tiny(self):
        q = QuantIndices(np.zeros((16, 16, 4), np.int32), 4)
        bs = encode(q)
        assert len(bs.payload) < 512  # raw would be 16*16*4*4/8

    def test_incompressible_source_stays_near_raw(self):
        rng = np.random.default_rng(5)
        sizes = []
        for _ in range(20):
            q = random_indices(rng, 16, 16, 2, 4)
            sizes.append(len(encode(q).payload))
        raw = 16 * 16 * 2 * 4 / 8
        assert np.mean(sizes) >= 0.98 * raw

    def test_significance_state_grows_monotonically(self):
        rng = np.random.default_rng(6)
        q = random_indices(rng, 6, 6, 1, 5)
        significant = set()
        seen_sig_after_refine = False
        refined = set()
        for ev in trace_bits(q):
            key = (ev.y, ev.x)
            if ev.ctx.kind == "refinement":
                refined.add(key)
            else:
                if key in refined:
                    seen_sig_after_refine = True
        assert not seen_sig_after_refine

    def test_refinement_only_after_one_bit(self):
        rng = np.random.default_rng(7)
        q = random_indices(rng, 5, 5, 2, 4)
        first_one_plane = {}
        for ev in trace_bits(q):
            key = (ev.channel, ev.y, ev.x)
            if ev.ctx.kind == "refinement":
                assert key in first_one_plane and first_one_plane[key] < ev.plane
            elif ev.bit and key not in first_one_plane:
                first_one_plane[key] = ev.plane


class TestBitstreamContainer:
    def test_header_round_trip(self):
        rng = np.random.default_rng(8)
        q = random_indices(rng, 4, 6, 2, 3)
        bs = encode(q, orig_size=(41, 29))
        back = Bitstream.from_bytes(bs.to_bytes())
        assert (back.b, back.channels) == (3, 2)
        assert (back.padded_width, back.padded_height) == (48, 32)
        assert (back.orig_width, back.orig_height) == (41, 29)
        assert back.payload == bs.payload
        np.testing.assert_array_equal(decode(back).indices, q.indices)

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            Bitstream.from_bytes(b"XXXX" + bytes(30))

    def test_bad_version(self):
        rng = np.random.default_rng(9)
        data = bytearray(encode(random_indices(rng, 2, 2, 1, 2)).to_bytes())
        data[4] = 99
        with pytest.raises(BadVersionError):
            Bitstream.from_bytes(bytes(data))

    def test_truncated_header(self):
        with pytest.raises(TruncatedStreamError):
            Bitstream.from_bytes(b"SBC1\x01")

    def test_truncated_payload(self):
        rng = np.random.default_rng(10)
        q = random_indices(rng, 8, 8, 2, 6)
        data = encode(q).to_bytes()
        with pytest.raises(TruncatedStreamError):
            decode(Bitstream.from_bytes(data[: HEADER_SIZE + 3]))

    def test_inconsistent_header(self):
        with pytest.raises(HeaderFieldError):
            Bitstream(4, 1, 15, 16, 15, 15, b"").validate_header()
        with pytest.raises(HeaderFieldError):
            Bitstream(0, 1, 16, 16, 16, 16, b"").validate_header()
        with pytest.raises(HeaderFieldError):
            Bitstream(4, 1, 16, 16, 17, 16, b"").validate_header()

    def test_actual_bpp_formula(self):
        bs = Bitstream(4, 4, 128, 128, 128, 128, bytes(512))
        assert actual_bpp(bs) == pytest.approx((512 + 24) * 8 / 16384)
        assert actual_bpp(bs) > 0


class TestGoldenVectors:
    """Frozen byte streams guard cross-run and cross-change stability."""

    @pytest.mark.parametrize("name", ["tensor_a", "tensor_zero", "tensor_b"])
    def test_byte_exact(self, name):
        q = np.load(GOLDEN / f"{name}.npy")
        meta = np.load(GOLDEN / f"{name}_b.npy")
        bs = encode(QuantIndices(q, int(meta)))
        expected = (GOLDEN / f"{name}.sbc").read_bytes()
        assert bs.to_bytes() == expected

    @pytest.mark.parametrize("name", ["tensor_a", "tensor_zero", "tensor_b"])
    def test_golden_decodes(self, name):
        data = (GOLDEN / f"{name}.sbc").read_bytes()
        q = np.load(GOLDEN / f"{name}.npy")
        out = decode(Bitstream.from_bytes(data))
        np.testing.assert_array_equal(out.indices, q)
