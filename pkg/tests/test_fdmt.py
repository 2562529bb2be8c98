import numpy as np
import numpy.testing as npt
import pytest

from depthforensics.depth_gt import PatchGrid
from depthforensics.exceptions import ContractViolation
from depthforensics.fdmt import Fdmt, FdmtConfig, TransformerBlock, patchify, unpatchify

from .gradcheck import fd_gradient, norm_rel_err, randomize_params

REDUCED = FdmtConfig(image_size=8, patches_per_side=2, embed_dim=8, blocks=2, heads=2, mlp_ratio=2.0)


class TestConfig:
    def test_default_shapes(self):
        cfg = FdmtConfig()
        assert cfg.patch_count == 196
        assert cfg.patch_dim == 16 * 16 * 3

    def test_embed_must_divide_heads(self):
        with pytest.raises(ContractViolation):
            FdmtConfig(embed_dim=10, heads=3)

    def test_needs_blocks(self):
        with pytest.raises(ContractViolation):
            FdmtConfig(blocks=0)


class TestPatchify:
    def test_paper_shapes(self):
        grid = PatchGrid(224, 224, 14)
        image = np.random.default_rng(0).uniform(0, 1, (224, 224, 3))
        patches = patchify(image, grid)
        assert patches.shape == (196, 768)

    def test_reassembly_bit_exact(self):
        grid = PatchGrid(32, 32, 4)
        rng = np.random.default_rng(1)
        images = rng.uniform(0, 1, (3, 32, 32, 3))
        npt.assert_array_equal(unpatchify(patchify(images, grid), grid), images)

    def test_indivisible_rejected(self):
        with pytest.raises(ContractViolation):
            PatchGrid(224, 224, 15)

    def test_wrong_image_shape_rejected(self):
        grid = PatchGrid(32, 32, 4)
        with pytest.raises(ContractViolation):
            patchify(np.zeros((16, 16, 3)), grid)


class TestEmbedPatches:
    def test_zero_weights_leave_position_embeddings(self):
        model = Fdmt(REDUCED, np.random.default_rng(0))
        model.embed.weight.value[...] = 0.0
        model.embed.bias.value[...] = 0.0
        patches = np.random.default_rng(1).uniform(0, 1, (2, 4, REDUCED.patch_dim))
        tokens, _ = model.embed_patches(patches)
        npt.assert_allclose(tokens, np.broadcast_to(model.pos.value, tokens.shape))

    def test_single_patch_locality(self):
        model = Fdmt(REDUCED, np.random.default_rng(0))
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, (1, 4, REDUCED.patch_dim))
        b = a.copy()
        b[0, 2] += rng.uniform(0.1, 0.5, REDUCED.patch_dim)
        ta, _ = model.embed_patches(a)
        tb, _ = model.embed_patches(b)
        diff = np.abs(ta - tb).sum(axis=-1)[0]
        assert diff[2] > 0
        npt.assert_allclose(diff[[0, 1, 3]], 0.0, atol=1e-14)

    def test_output_shape(self):
        cfg = FdmtConfig()
        model = Fdmt(cfg, np.random.default_rng(0))
        patches = np.zeros((1, 196, cfg.patch_dim))
        tokens, _ = model.embed_patches(patches)
        assert tokens.shape == (1, 196, cfg.embed_dim)


class TestTransformerBlock:
    def test_shape_preserved(self):
        rng = np.random.default_rng(0)
        for p, e, heads in ((4, 8, 2), (16, 12, 4), (9, 6, 3)):
            block = TransformerBlock(rng, e, heads, 2.0)
            x = rng.standard_normal((2, p, e))
            out, _ = block.forward(x)
            assert out.shape == x.shape

    def test_attention_rows_stochastic(self):
        rng = np.random.default_rng(1)
        block = TransformerBlock(rng, 8, 2, 2.0)
        randomize_params(block, 5)
        x = rng.standard_normal((3, 6, 8))
        _, cache = block.forward(x)
        attn = block.attn.attention_from_cache(cache[1])
        npt.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(attn >= 0)

    def test_zeroed_output_projections_make_identity(self):
        rng = np.random.default_rng(2)
        block = TransformerBlock(rng, 8, 2, 2.0)
        block.attn.proj.weight.value[...] = 0.0
        block.attn.proj.bias.value[...] = 0.0
        block.mlp.fc2.weight.value[...] = 0.0
        block.mlp.fc2.bias.value[...] = 0.0
        x = rng.standard_normal((2, 4, 8))
        out, _ = block.forward(x)
        npt.assert_array_equal(out, x)


class TestDepthHead:
    def test_output_length_and_range(self):
        model = Fdmt(FdmtConfig(), np.random.default_rng(0))
        tokens = np.random.default_rng(1).standard_normal((2, 196, 192))
        pred, _ = model.depth_head(tokens)
        assert pred.shape == (2, 196)
        assert np.all(pred >= 0) and np.all(pred <= 1)

    def test_permutation_equivariance_with_zeroed_positions(self):
        model = Fdmt(REDUCED, np.random.default_rng(0))
        randomize_params(model, 7)
        model.pos.value[...] = 0.0
        rng = np.random.default_rng(3)
        images = rng.uniform(0, 1, (1, 8, 8, 3)).astype(np.float32).astype(np.float64)
        perm = rng.permutation(REDUCED.patch_count)
        grid = REDUCED.grid
        patches = patchify(images, grid)
        permuted_images = unpatchify(patches[:, perm], grid)
        base, _, _ = model.forward(images)
        shuffled, _, _ = model.forward(permuted_images)
        assert np.max(np.abs(shuffled - base[:, perm])) < 1e-5


class TestForward:
    def test_head_consistency_with_features(self):
        model = Fdmt(REDUCED, np.random.default_rng(0))
        images = np.random.default_rng(1).uniform(0, 1, (2, 8, 8, 3))
        depth, feats, _ = model.forward(images)
        re_applied, _ = model.depth_head(feats.reshape(2, 4, REDUCED.embed_dim))
        npt.assert_array_equal(re_applied, depth)

    def test_deterministic(self):
        model = Fdmt(REDUCED, np.random.default_rng(0))
        images = np.random.default_rng(1).uniform(0, 1, (2, 8, 8, 3))
        d1, f1, _ = model.forward(images)
        d2, f2, _ = model.forward(images)
        npt.assert_array_equal(d1, d2)
        npt.assert_array_equal(f1, f2)

    def test_shape_invariance_through_blocks(self):
        cfg = FdmtConfig(image_size=32, patches_per_side=4, embed_dim=16, blocks=4, heads=4)
        model = Fdmt(cfg, np.random.default_rng(0))
        images = np.random.default_rng(1).uniform(0, 1, (2, 32, 32, 3))
        depth, feats, cache = model.forward(images)
        assert depth.shape == (2, 16)
        assert feats.shape == (2, 4, 4, 16)
        for attn in Fdmt.attention_maps(cache):
            assert attn.shape == (2, 4, 16, 16)
            npt.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)

    def test_input_gradient_matches_finite_differences(self):
        model = Fdmt(REDUCED, np.random.default_rng(0))
        randomize_params(model, 9)
        rng = np.random.default_rng(4)
        images = rng.uniform(0, 1, (1, 8, 8, 3))
        w = rng.standard_normal((1, 4))

        def loss():
            depth, _, _ = model.forward(images)
            return float((depth * w).sum())

        _, _, cache = model.forward(images)
        model.zero_grad()
        dimages = model.backward(w.copy(), None, cache)
        fd = fd_gradient(images, loss, h=1e-6)
        assert norm_rel_err(fd, dimages) < 1e-4

    def test_parameter_gradients_match_finite_differences(self):
        model = Fdmt(REDUCED, np.random.default_rng(0))
        randomize_params(model, 11)
        rng = np.random.default_rng(5)
        images = rng.uniform(0, 1, (2, 8, 8, 3))
        w = rng.standard_normal((2, 4))

        def loss():
            depth, feats, _ = model.forward(images)
            return float((depth * w).sum() + 0.1 * (feats**2).sum())

        depth, feats, cache = model.forward(images)
        model.zero_grad()
        model.backward(w.copy(), 0.2 * feats, cache)
        for name, p in model.named_parameters():
            fd = fd_gradient(p.value, loss, h=1e-5)
            assert norm_rel_err(fd, p.grad) < 1e-4, name
