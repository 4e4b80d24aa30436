import numpy as np
import pytest
import torch

from faceref.errors import InvalidArgumentError, NoFaceError
from faceref.identity import (FusionHead, PixelFaceRecognizer,
                              PixelImageEmbedder, PromptEmbedding,
                              center_crop, combine, detect_and_crop,
                              encode_identity, export_embeddings,
                              extract_identity_span, replace_token,
                              toy_prompt_embedding)


class StubFusion:
    """align = zero-pad/truncate g to len(f); fuse = elementwise mean."""

    def eval(self):
        return self

    def __call__(self, g, f):
        g, f = g.reshape(-1), f.reshape(-1)
        if len(g) >= len(f):
            g_hat = g[:len(f)]
        else:
            g_hat = torch.cat([g, torch.zeros(len(f) - len(g))])
        return (g_hat + f) / 2.0


class TestDetectAndCrop:
    def test_stub_passthrough(self, rng):
        image = rng.random((64, 64, 3))
        crop = detect_and_crop(image, lambda img: [(8, 8, 32, 32)],
                               crop_side=32)
        assert crop.image.shape == (32, 32, 3)
        assert np.allclose(crop.image, image[8:40, 8:40])
        assert crop.box == (8, 8, 32, 32)

    def test_largest_face_chosen(self, rng):
        image = rng.random((64, 64, 3))
        crop = detect_and_crop(
            image, lambda img: [(0, 0, 8, 8), (16, 16, 32, 32)], crop_side=16)
        assert crop.box == (16, 16, 32, 32)

    def test_leftmost_tie_break(self, rng):
        image = rng.random((64, 64, 3))
        crop = detect_and_crop(
            image, lambda img: [(30, 0, 16, 16), (2, 0, 16, 16)], crop_side=16)
        assert crop.box[0] == 2

    def test_no_face_error(self, rng):
        with pytest.raises(NoFaceError):
            detect_and_crop(rng.random((32, 32, 3)), lambda img: [])

    def test_center_crop_fallback_flagged(self, rng):
        crop = center_crop(rng.random((48, 64, 3)), crop_side=32)
        assert crop.fallback
        assert crop.image.shape == (32, 32, 3)


class TestEncodeIdentity:
    def test_hand_computed_stub_pipeline(self):
        # 4-dim toy case computed by hand:
        # f = [1, 2, 3, 4]; g = [10, 20] -> zero-pad -> [10, 20, 0, 0]
        # s = mean = [5.5, 11, 1.5, 2]
        crop = center_crop(np.zeros((8, 8, 3)), crop_side=8)
        embedder = lambda img: np.array([1.0, 2.0, 3.0, 4.0])
        recognizer = lambda img: np.array([10.0, 20.0])
        s = encode_identity(crop, embedder, recognizer, StubFusion())
        assert np.allclose(s, [5.5, 11.0, 1.5, 2.0])

    def test_deterministic(self, rng):
        crop = center_crop(rng.random((64, 64, 3)))
        fusion = FusionHead(dim=64)
        emb, rec = PixelImageEmbedder(64), PixelFaceRecognizer()
        s1 = encode_identity(crop, emb, rec, fusion)
        s2 = encode_identity(crop, emb, rec, fusion)
        assert np.array_equal(s1, s2)
        assert s1.shape == (64,)

    def test_distinct_crops_distinct_embeddings(self, rng):
        fusion = FusionHead(dim=64)
        emb, rec = PixelImageEmbedder(64), PixelFaceRecognizer()
        a = encode_identity(center_crop(rng.random((64, 64, 3))), emb, rec, fusion)
        b = encode_identity(center_crop(rng.random((64, 64, 3))), emb, rec, fusion)
        assert not np.allclose(a, b)


class TestCombine:
    def test_single(self, rng):
        e = rng.random(16)
        s = combine([e])
        assert s.shape == (1, 16)
        assert np.allclose(s[0], e)

    def test_order_preserved(self, rng):
        a, b = rng.random(8), rng.random(8)
        assert np.allclose(combine([a, b]), combine([b, a])[::-1])

    def test_four_references(self, rng):
        s = combine([rng.random(64) for _ in range(4)])
        assert s.shape == (4, 64)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            combine([])

    def test_mixed_lengths_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            combine([rng.random(8), rng.random(9)])


class TestPromptEmbedding:
    def test_toy_prompt_has_five_tokens(self):
        c = toy_prompt_embedding(dim=64)
        assert c.tokens.shape == (5, 64)
        assert c.token_index == 3  # "face" in [a, photo, of, face, .]
        again = toy_prompt_embedding(dim=64)
        assert np.array_equal(c.tokens, again.tokens)

    def test_replace_single_preserves_length(self, rng):
        c_text = toy_prompt_embedding(dim=16)
        s = combine([rng.random(16)])
        c_id = replace_token(c_text, s)
        assert c_id.tokens.shape == (5, 16)
        changed = [i for i in range(5)
                   if not np.array_equal(c_id.tokens[i], c_text.tokens[i])]
        assert changed == [3]

    def test_replace_four_matches_layout(self, rng):
        c_text = toy_prompt_embedding(dim=16)
        s = combine([rng.random(16) for _ in range(4)])
        c_id = replace_token(c_text, s)
        assert c_id.tokens.shape == (8, 16)
        assert np.array_equal(c_id.tokens[:3], c_text.tokens[:3])
        assert np.array_equal(c_id.tokens[7], c_text.tokens[4])
        assert np.array_equal(c_id.tokens[3:7], s)

    def test_round_trip_extraction(self, rng):
        c_text = toy_prompt_embedding(dim=16)
        s = combine([rng.random(16) for _ in range(3)])
        c_id = replace_token(c_text, s)
        assert np.array_equal(extract_identity_span(c_id, c_text, 3), s)

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
    def test_length_law(self, rng, n):
        c_text = toy_prompt_embedding(dim=8)
        c_id = replace_token(c_text, combine([rng.random(8) for _ in range(n)]))
        assert c_id.tokens.shape[0] == 5 - 1 + n

    def test_permutation_equivariance(self, rng):
        c_text = toy_prompt_embedding(dim=8)
        embs = [rng.random(8) for _ in range(4)]
        perm = [2, 0, 3, 1]
        c_a = replace_token(c_text, combine(embs))
        c_b = replace_token(c_text, combine([embs[i] for i in perm]))
        span_a = extract_identity_span(c_a, c_text, 4)
        span_b = extract_identity_span(c_b, c_text, 4)
        assert np.array_equal(span_a[perm], span_b)

    def test_invalid_token_index(self, rng):
        with pytest.raises(InvalidArgumentError):
            bad = PromptEmbedding(tokens=rng.random((5, 8)), token_index=9)
            replace_token(bad, combine([rng.random(8)]))

    def test_dim_mismatch(self, rng):
        c_text = toy_prompt_embedding(dim=8)
        with pytest.raises(InvalidArgumentError):
            replace_token(c_text, combine([rng.random(9)]))


def test_export_embeddings(tmp_path, rng):
    embs = {"a": rng.random(8), "b": rng.random(8)}
    path = tmp_path / "embs.npz"
    export_embeddings(path, embs)
    import json
    archive = np.load(path)
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    assert sidecar["d"] == 8 and sidecar["N"] == 2
    row = sidecar["index"]["b"]
    assert np.allclose(archive["embeddings"][row], embs["b"].astype(np.float32))
