import numpy as np
import pytest
from conftest import SMALL

from catchvqa import vocab
from catchvqa.backbone import _NO_PREFIX, Backbone, BackboneConfig, patchify, prefix_lm_mask
from catchvqa.errors import ConfigError, ShapeError
from catchvqa.tensor import MASK_VALUE, Tensor


def test_patchify_row_major():
    img = np.arange(16.0).reshape(1, 4, 4)
    p = patchify(img, 2)
    assert p.shape == (1, 4, 4)
    assert p[0, 0].tolist() == [0, 1, 4, 5]
    assert p[0, 1].tolist() == [2, 3, 6, 7]
    assert p[0, 2].tolist() == [8, 9, 12, 13]


def test_prefix_lm_mask_layout():
    m = prefix_lm_mask(3, 2)
    assert m.shape == (5, 5)
    assert not m[:, :3].any()  # every row sees the context
    assert m[0, 3] == MASK_VALUE  # context rows do not see text
    assert m[3, 4] == MASK_VALUE and m[4, 3] == 0.0
    assert not m.flags.writeable


def test_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(image_size=30)
    with pytest.raises(ConfigError):
        BackboneConfig(d_v=62)
    with pytest.raises(ConfigError):
        BackboneConfig(pixel_std=0)
    assert BackboneConfig().num_patches == 16


def test_default_hook_sites():
    bb = Backbone(seed=0)
    names = [line.split()[0] for line in bb.hooks.dump().splitlines()]
    assert names == [f"vision.block.{i}" for i in range(1, 13)]


def test_shapes(small_backbone, tiny_data):
    te = tiny_data[2]
    v = small_backbone.visual_tokens(te.images[:3])
    assert v.shape == (3, 16, SMALL.d_q)
    logits = small_backbone.answer_logits(te.images[:3], te.questions[:3], np.zeros((3, 2), dtype=np.int64))
    assert logits.shape == (3, 7, SMALL.vocab_size)


def test_image_size_checked(small_backbone):
    with pytest.raises(ConfigError):
        small_backbone.visual_tokens(np.zeros((1, 16, 16)))


def test_text_checks(small_backbone):
    with pytest.raises(ShapeError):
        small_backbone.embed_text(np.zeros((1, SMALL.max_text_len + 1), dtype=np.int64))
    with pytest.raises(ShapeError):
        small_backbone.embed_text([[SMALL.vocab_size]])
    with pytest.raises(ShapeError):
        small_backbone.generate(np.zeros((1, 32, 32)), np.zeros((1, 0), dtype=np.int64))


def test_causal_text_rows(small_backbone, tiny_data):
    """Changing a later text token never changes earlier logits."""
    s = tiny_data[2][0]
    vis = small_backbone.visual_tokens(s.image)
    a = np.array([s.question + [3, 4]])
    b = np.array([s.question + [3, 9]])
    la = small_backbone.text_logits(vis, a, _NO_PREFIX).data
    lb = small_backbone.text_logits(vis, b, _NO_PREFIX).data
    assert np.array_equal(la[:, :-1], lb[:, :-1])
    assert not np.array_equal(la[:, -1], lb[:, -1])


def test_prefix_changes_only_text_side(small_backbone, tiny_data):
    s = tiny_data[2][0]
    vis = small_backbone.visual_tokens(s.image)
    ids = np.array([s.question])
    plain = small_backbone.text_logits(vis, ids, _NO_PREFIX).data
    prefix = Tensor(np.random.default_rng(0).normal(size=(3, SMALL.d_q)))
    with_p = small_backbone.text_logits(vis, ids, prefix).data
    assert plain.shape == with_p.shape
    assert not np.array_equal(plain, with_p)


def test_generate_batched_matches_single(small_backbone, tiny_data):
    te = tiny_data[2]
    batch = small_backbone.generate(te.images[:5], te.questions[:5], prefix=_NO_PREFIX)
    single = [small_backbone.generate_greedy(te[i].image, te[i].question) for i in range(5)]
    assert batch == single
    for ans in batch:
        assert vocab.END_ID not in ans and len(ans) <= SMALL.max_answer_len


def test_pixel_standardisation(small_backbone):
    c = SMALL
    img = np.full((1, 32, 32), c.pixel_mean)
    emb = small_backbone.embed_patches(img).data
    np.testing.assert_array_equal(emb[0], small_backbone.params["vision.pos"].data)


def test_save_load_round_trip(tmp_path, small_backbone, tiny_data):
    small_backbone.save(tmp_path / "b.ckpt")
    back = Backbone.load(tmp_path / "b.ckpt")
    assert back.config == SMALL and back.frozen
    assert back.checksum() == small_backbone.checksum()
    te = tiny_data[2]
    assert back.generate(te.images[:4], te.questions[:4]) == small_backbone.generate(te.images[:4], te.questions[:4])


def test_seed_determinism():
    assert Backbone(SMALL, seed=3).checksum() == Backbone(SMALL, seed=3).checksum()
    assert Backbone(SMALL, seed=3).checksum() != Backbone(SMALL, seed=4).checksum()
