from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qekit.data import FormatError, QESample
from qekit.encoder import (
    EncoderConfig,
    HiddenStates,
    TokenRange,
    encode_toy,
    load_hidden_for,
    read_hidden,
    read_manifest,
    write_hidden,
    write_hidden_set,
)

CFG = EncoderConfig(d=8, L=3, seed=11)


def sample(mt="a b", src="x", sid="s"):
    return QESample(sid, "en-de", src, mt)


class TestEncodeToy:
    def test_layout(self):
        h = encode_toy(sample("a b", "x"), CFG)
        assert h.layers.shape == (4, 6, 8)
        sides = [r.text_side for r in h.ranges]
        assert sides == ["special", "target", "target", "special", "source", "special"]
        assert h.cls_index == 0
        np.testing.assert_array_equal(h.target_index, [1, 2])

    def test_deterministic(self):
        assert encode_toy(sample(), CFG) == encode_toy(sample(), CFG)
        np.testing.assert_array_equal(encode_toy(sample(), CFG).layers, encode_toy(sample(), CFG).layers)

    def test_seed_matters(self):
        other = EncoderConfig(d=8, L=3, seed=12)
        assert not np.array_equal(encode_toy(sample(), CFG).layers, encode_toy(sample(), other).layers)

    def test_layer0_context_free(self):
        a = encode_toy(sample("one two three", "src words here"), CFG)
        b = encode_toy(sample("one two three", "src other here"), CFG)
        np.testing.assert_array_equal(a.layers[0][a.target_index], b.layers[0][b.target_index])
        for ell in range(1, CFG.L + 1):
            assert not np.allclose(a.layers[ell][a.target_index], b.layers[ell][b.target_index])

    def test_max_len(self):
        with pytest.raises(ValueError, match="max_len"):
            encode_toy(sample("w " * 10, "x"), EncoderConfig(d=4, L=1, max_len=8))

    def test_empty_text(self):
        with pytest.raises(ValueError):
            encode_toy(sample("  ", "x"), CFG)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.text(alphabet="abc日ü-", min_size=1, max_size=4), min_size=1, max_size=20), st.sampled_from([" ", "  ", "\t"]))
    def test_target_ranges_tile_words(self, words, sep):
        mt = sep.join(words)
        h = encode_toy(sample(mt, "src"), CFG)
        assert len(h.target_index) == len(words)
        cover = np.zeros(len(mt), dtype=int)
        for a, b in h.target_ranges():
            cover[a:b] += 1
        for i, ch in enumerate(mt):
            assert cover[i] == (0 if ch.isspace() else 1)
        assert np.all(np.isfinite(h.layers))

    def test_finite_at_max_len(self):
        cfg = EncoderConfig(d=16, L=4, max_len=512)
        h = encode_toy(sample(" ".join(["zz"] * 300), " ".join(["yy"] * 209)), cfg)
        assert h.layers.shape[1] == 512
        assert np.all(np.isfinite(h.layers))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(d=0)
        with pytest.raises(ValueError):
            EncoderConfig(L=0)


class TestHiddenFiles:
    def test_round_trip(self, tmp_path):
        h = encode_toy(sample("hello there world", "bonjour"), CFG)
        write_hidden(h, tmp_path / "h.bin")
        back = read_hidden(tmp_path / "h.bin")
        assert back.ranges == h.ranges
        assert np.max(np.abs(back.layers - h.layers)) <= 1e-6

    def test_header(self, tmp_path):
        h = encode_toy(sample(), CFG)
        write_hidden(h, tmp_path / "h.bin")
        header = json.loads((tmp_path / "h.bin").read_bytes().split(b"\n", 1)[0])
        assert header["dtype"] == "f32" and header["layout"] == "row-major"
        assert header["dims"] == [4, 6, 8]

    def test_truncated(self, tmp_path):
        h = encode_toy(sample(), CFG)
        write_hidden(h, tmp_path / "h.bin")
        raw = (tmp_path / "h.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-10])
        with pytest.raises(FormatError):
            read_hidden(tmp_path / "t.bin")
        (tmp_path / "n.bin").write_bytes(raw[:20])
        with pytest.raises(FormatError):
            read_hidden(tmp_path / "n.bin")

    def test_size_mismatch(self, tmp_path):
        ranges = [{"token_index": 0, "text_side": "special"}] + [
            {"token_index": i, "text_side": "target", "char_start": 2 * i - 2, "char_end": 2 * i - 1} for i in (1, 2)
        ]
        header = {"dtype": "f32", "layout": "row-major", "dims": [2, 3, 4], "ranges": ranges}
        body = np.zeros(23, dtype="<f4").tobytes()
        (tmp_path / "m.bin").write_bytes(json.dumps(header).encode() + b"\n" + body)
        with pytest.raises(FormatError, match="size mismatch") as ei:
            read_hidden(tmp_path / "m.bin")
        assert ei.value.field == "dims"

    @pytest.mark.parametrize("key,value", [("dtype", "f64"), ("layout", "col-major"), ("dims", [2, 3])])
    def test_bad_header_field(self, tmp_path, key, value):
        h = encode_toy(sample(), CFG)
        write_hidden(h, tmp_path / "h.bin")
        head, body = (tmp_path / "h.bin").read_bytes().split(b"\n", 1)
        header = json.loads(head)
        header[key] = value
        (tmp_path / "h.bin").write_bytes(json.dumps(header).encode() + b"\n" + body)
        with pytest.raises(FormatError) as ei:
            read_hidden(tmp_path / "h.bin")
        assert ei.value.field == key

    def test_manifest(self, tmp_path):
        hs = {f"s{i}": encode_toy(sample("a b c"[: 2 * i + 1], "x", f"s{i}"), CFG) for i in range(3)}
        manifest = write_hidden_set(hs, tmp_path / "hid")
        assert set(read_manifest(manifest)) == set(hs)
        back = load_hidden_for(["s2", "s0"], manifest)
        assert list(back) == ["s2", "s0"]
        with pytest.raises(FormatError):
            load_hidden_for(["nope"], manifest)


class TestHiddenStates:
    def test_cls_must_be_special(self):
        with pytest.raises(ValueError):
            HiddenStates(np.zeros((2, 1, 3)), (TokenRange(0, "target", 0, 1),))

    def test_range_count_must_match(self):
        with pytest.raises(ValueError):
            HiddenStates(np.zeros((2, 2, 3)), (TokenRange(0, "special"),))
