import io
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from redtest import flatten, load_trace, read_tensor, synth_trace, write_tensor
from redtest.errors import (
    BadMagic,
    BadSpec,
    EmptyTensor,
    ManifestMismatch,
    NonFinite,
    Truncated,
    UnsupportedLayout,
)
from redtest.similarity import cka
from redtest.trace_io import LayerSpec, decode_tensor, encode_tensor, parse_layer_specs, save_trace


def _npy_bytes(a, **kw):
    buf = io.BytesIO()
    np.save(buf, a, **kw)
    return buf.getvalue()


def _patched_header(old, new, a=np.zeros((2, 2))):
    raw = _npy_bytes(a)
    hlen = struct.unpack("<H", raw[8:10])[0]
    header = raw[10 : 10 + hlen].decode().replace(old, new)
    header = header.rstrip("\n")
    header = header + " " * (hlen - 1 - len(header)) + "\n"
    return raw[:10] + header.encode() + raw[10 + hlen :]


class TestNpy:
    def test_round_trip_small(self, tmp_path):
        write_tensor(tmp_path / "a.npy", [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(read_tensor(tmp_path / "a.npy"), [[1.0, 2.0], [3.0, 4.0]])

    def test_one_by_one(self, tmp_path):
        write_tensor(tmp_path / "z.npy", [[0.0]])
        assert read_tensor(tmp_path / "z.npy").shape == (1, 1)

    def test_layout(self):
        buf = encode_tensor(np.arange(6.0).reshape(2, 3))
        assert buf[:8] == b"\x93NUMPY\x01\x00"
        hlen = struct.unpack("<H", buf[8:10])[0]
        assert (10 + hlen) % 64 == 0
        assert buf[10 + hlen - 1 : 10 + hlen] == b"\n"
        assert len(buf) - (10 + hlen) == 48

    def test_matches_reference_writer(self, rng):
        a = rng.standard_normal((7, 5))
        assert encode_tensor(a) == _npy_bytes(a)

    def test_reads_reference_float32(self, tmp_path, rng):
        a = rng.standard_normal((3, 4)).astype(np.float32)
        np.save(tmp_path / "f.npy", a)
        out = read_tensor(tmp_path / "f.npy")
        assert out.dtype == np.float64
        np.testing.assert_array_equal(out, a.astype(np.float64))

    def test_bitwise_round_trip_seeded(self, tmp_path):
        x = np.random.default_rng(7).standard_normal((7, 5))
        write_tensor(tmp_path / "x.npy", x)
        assert read_tensor(tmp_path / "x.npy").tobytes() == x.tobytes()

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=6),
                      elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_round_trip_property(self, a):
        assert decode_tensor(encode_tensor(a)).tobytes() == a.tobytes()

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            decode_tensor(b"\x93NUMPZ" + _npy_bytes(np.zeros((2, 2)))[6:])

    def test_fortran_order(self):
        with pytest.raises(UnsupportedLayout):
            decode_tensor(_npy_bytes(np.asfortranarray(np.arange(6.0).reshape(2, 3))))

    def test_fortran_flag_patched(self):
        with pytest.raises(UnsupportedLayout):
            decode_tensor(_patched_header("'fortran_order': False", "'fortran_order': True"))

    def test_version_two(self):
        raw = bytearray(_npy_bytes(np.zeros((2, 2))))
        raw[6] = 2
        with pytest.raises(UnsupportedLayout):
            decode_tensor(bytes(raw))

    def test_integer_dtype(self):
        with pytest.raises(UnsupportedLayout):
            decode_tensor(_npy_bytes(np.arange(4).reshape(2, 2)))

    def test_big_endian(self):
        with pytest.raises(UnsupportedLayout):
            decode_tensor(_npy_bytes(np.zeros((2, 2), dtype=">f8")))

    def test_truncated_payload(self):
        with pytest.raises(Truncated):
            decode_tensor(_npy_bytes(np.zeros((4, 4)))[:-8])

    def test_truncated_header(self):
        with pytest.raises(Truncated):
            decode_tensor(_npy_bytes(np.zeros((4, 4)))[:40])

    def test_non_finite_read(self):
        with pytest.raises(NonFinite):
            decode_tensor(_npy_bytes(np.array([[1.0, np.nan]])))

    def test_non_finite_write(self):
        with pytest.raises(NonFinite):
            encode_tensor([[np.inf]])


class TestFlatten:
    def test_row_major(self):
        m = flatten(np.array([[[1, 2], [3, 4]], [[5, 6], [7, 8]]]))
        np.testing.assert_array_equal(m.data, [[1, 2, 3, 4], [5, 6, 7, 8]])

    def test_identity_on_matrix(self, rng):
        a = rng.standard_normal((4, 7))
        np.testing.assert_array_equal(flatten(a).data, a)

    def test_conv_index_arithmetic(self, rng):
        t = rng.standard_normal((4, 3, 28, 28))
        m = flatten(t).data
        assert m.shape == (4, 2352)
        for s, i, r, c in [(0, 0, 0, 0), (1, 2, 27, 27), (3, 1, 5, 17), (2, 0, 13, 2)]:
            assert m[s, i * 784 + r * 28 + c] == t[s, i, r, c]

    def test_rows_depend_only_on_their_sample(self, rng):
        t = rng.standard_normal((5, 2, 3))
        t2 = t.copy()
        t2[3] += 1.0
        a, b = flatten(t).data, flatten(t2).data
        np.testing.assert_array_equal(np.delete(a, 3, 0), np.delete(b, 3, 0))

    def test_empty_axis(self):
        with pytest.raises(EmptyTensor):
            flatten(np.zeros((4, 0, 3)))


def _manifest(tmp_path, layers, batch=None, family="plain"):
    entries = []
    for k, (shape, file_shape) in enumerate(layers):
        fname = f"l{k}.npy"
        write_tensor(tmp_path / fname, np.random.default_rng(k).standard_normal(file_shape))
        entries.append({"name": f"l{k}", "file": fname, "shape": list(shape)})
    batch = batch if batch is not None else layers[0][0][0]
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"model": "m", "batch_size": batch, "structure_family": family, "layers": entries}))
    return path


class TestLoadTrace:
    def test_single_layer(self, tmp_path):
        t = load_trace(_manifest(tmp_path, [((4, 3), (4, 3))]))
        assert len(t) == 1 and t.batch_size == 4

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(ManifestMismatch):
            load_trace(_manifest(tmp_path, [((4, 3), (4, 5))]))

    def test_batch_mismatch(self, tmp_path):
        with pytest.raises(ManifestMismatch):
            load_trace(_manifest(tmp_path, [((4, 3), (4, 3))], batch=8))

    def test_flattened_widths(self, tmp_path):
        t = load_trace(_manifest(tmp_path, [((8, 2), (8, 2)), ((8, 3, 3), (8, 3, 3)), ((8, 4), (8, 4))]))
        assert [layer.p for layer in t.layers] == [2, 9, 4]
        assert t.layer_names == ["l0", "l1", "l2"]

    def test_read_error_names_layer(self, tmp_path):
        path = _manifest(tmp_path, [((4, 3), (4, 3)), ((4, 3), (4, 3))])
        (tmp_path / "l1.npy").write_bytes(b"garbage")
        with pytest.raises(BadMagic, match="l1"):
            load_trace(path)

    def test_threads_do_not_change_result(self, tmp_path):
        path = _manifest(tmp_path, [((6, 2), (6, 2)), ((6, 3), (6, 3)), ((6, 4), (6, 4))])
        a, b = load_trace(path, threads=1), load_trace(path, threads=4)
        for x, y in zip(a.layers, b.layers):
            assert x.data.tobytes() == y.data.tobytes()

    def test_save_and_reload(self, tmp_path):
        t = synth_trace(8, [(3, 0), (2, 0.5)], seed=3, structure_family="block")
        t2 = load_trace(save_trace(t, tmp_path / "out"))
        assert t2.structure_family == "block"
        for x, y in zip(t.layers, t2.layers):
            assert x.data.tobytes() == y.data.tobytes()


class TestSynth:
    def test_identity_map_gives_unit_cka(self):
        t = synth_trace(64, [(8, 0), (8, 1)], seed=5, rotate=False)
        np.testing.assert_array_equal(t.layers[0].data, t.layers[1].data)
        assert cka(t.layers[0], t.layers[1]).raw == 1.0

    def test_rotation_gives_unit_cka(self):
        t = synth_trace(64, [(8, 0), (8, 1)], seed=5)
        assert cka(t.layers[0], t.layers[1]).raw == pytest.approx(1.0, abs=1e-12)

    def test_independent_layers(self):
        values = [cka(*synth_trace(256, [(10, 0), (10, 0)], seed=s).layers).raw for s in range(20)]
        assert max(values) < 0.1

    def test_deterministic(self):
        specs = [LayerSpec(6, 0), LayerSpec(4, 0.7), LayerSpec(4, 0.2)]
        a, b = synth_trace(16, specs, seed=2**64 - 1), synth_trace(16, specs, seed=2**64 - 1)
        for x, y in zip(a.layers, b.layers):
            assert x.data.tobytes() == y.data.tobytes()

    def test_seed_matters(self):
        a, b = synth_trace(16, [(4, 0)], seed=1), synth_trace(16, [(4, 0)], seed=2)
        assert not np.array_equal(a.layers[0].data, b.layers[0].data)

    @pytest.mark.parametrize("specs", [[(4, 0), (4, 1.5)], [(4, 0), (4, -0.1)], [(4, 0), (6, 0.5)]])
    def test_bad_spec(self, specs):
        with pytest.raises(BadSpec):
            synth_trace(16, specs, seed=0)

    def test_wider_allowed_when_independent(self):
        assert synth_trace(16, [(4, 0), (6, 0)], seed=0).layers[1].p == 6

    def test_parse_layer_specs(self):
        assert parse_layer_specs("16:0, 8:0.5,4") == [LayerSpec(16, 0.0), LayerSpec(8, 0.5), LayerSpec(4, 0.0)]
        with pytest.raises(BadSpec):
            parse_layer_specs("x:1")
