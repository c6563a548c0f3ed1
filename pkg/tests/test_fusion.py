"""Fusion/reconstruction of the patch sequence and cosine-similarity analysis."""

import numpy as np
import pytest

from pft_reid.autodiff import Tensor
from pft_reid.fusion import fuse_reconstruct, patch_cosine_similarity


def fuse_oracle(seq):
    """Independent per-position index formula for the reconstructed sequence."""
    n = seq.shape[0] - 1
    q = n // 4
    out = np.empty_like(seq)
    out[0] = seq[0]
    for k in range(n):  # 0-based patch position
        if k < q:
            out[1 + k] = seq[1 + k] + seq[1 + k + q]
        elif k < 3 * q:
            out[1 + k] = seq[1 + k]
        else:
            out[1 + k] = seq[1 + k - q] + seq[1 + k]
    return out


class TestFuseReconstruct:
    def test_hand_case_n8(self):
        seq = Tensor(np.arange(9.0).reshape(9, 1))  # class=0, patches 1..8
        out = fuse_reconstruct(seq)
        assert out.data.reshape(-1).tolist() == [0, 4, 6, 3, 4, 5, 6, 12, 14]

    def test_hand_case_n4(self):
        seq = Tensor(np.array([[9.0], [1.0], [2.0], [3.0], [4.0]]))
        out = fuse_reconstruct(seq)
        assert out.data.reshape(-1).tolist() == [9, 3, 2, 3, 7]

    @pytest.mark.parametrize("n", [4, 8, 12, 48, 72])
    def test_matches_index_oracle_exactly(self, n):
        rng = np.random.default_rng(n)
        for _ in range(5):
            seq = rng.standard_normal((n + 1, 5))
            out = fuse_reconstruct(Tensor(seq))
            assert np.array_equal(out.data, fuse_oracle(seq))

    def test_length_preserved(self):
        seq = Tensor(np.random.default_rng(0).standard_normal((13, 3)))
        assert fuse_reconstruct(seq).shape == seq.shape

    def test_middle_rows_bitwise(self):
        rng = np.random.default_rng(1)
        seq = rng.standard_normal((49, 4))  # n=48, quarters of 12
        out = fuse_reconstruct(Tensor(seq)).data
        assert np.array_equal(out[13:37], seq[13:37])
        assert np.array_equal(out[0], seq[0])

    def test_linearity_on_patch_rows(self):
        rng = np.random.default_rng(2)
        seq = rng.standard_normal((13, 4))
        seq[0] = 0.0  # class row fixed so scaling commutes through it too
        once = fuse_reconstruct(Tensor(seq)).data
        scaled = fuse_reconstruct(Tensor(2.5 * seq)).data
        assert np.allclose(scaled, 2.5 * once, atol=1e-12)

    def test_not_divisible_rejected(self):
        with pytest.raises(ValueError, match="divisible by 4"):
            fuse_reconstruct(Tensor(np.zeros((11, 2))))

    def test_gradient_routes_to_fused_and_passthrough_positions(self):
        # a row in the second quarter contributes at its own position and
        # inside the reconstructed head quarter
        n = 8
        seq = Tensor(np.random.default_rng(3).standard_normal((n + 1, 2)), requires_grad=True)
        weights = np.zeros((n + 1, 2))
        weights[1] = 1.0  # first fused position: out[1] = seq[1] + seq[3]
        out = fuse_reconstruct(seq)
        (out * Tensor(weights)).sum().backward()
        grad = seq.grad
        assert np.array_equal(grad[1], [1.0, 1.0])
        assert np.array_equal(grad[3], [1.0, 1.0])
        assert np.all(grad[[0, 2, 4, 5, 6, 7, 8]] == 0.0)
        # and a pass-through F2 row accumulates from both its positions
        seq2 = Tensor(np.random.default_rng(4).standard_normal((n + 1, 2)), requires_grad=True)
        fuse_reconstruct(seq2).sum().backward()
        # F2/F3 rows (3..6) count twice (fused + pass-through), others once
        expect = np.ones((n + 1, 2))
        expect[3:7] = 2.0
        assert np.array_equal(seq2.grad, expect)


class TestPatchCosineSimilarity:
    def test_identical_rows_all_ones(self):
        sim = patch_cosine_similarity(np.tile([1.0, 2.0, 2.0], (4, 1)))
        assert np.allclose(sim, 1.0)

    def test_orthogonal_rows_identity(self):
        sim = patch_cosine_similarity(np.eye(4) * 3.0)
        assert np.allclose(sim, np.eye(4), atol=1e-15)

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 3))
        sim = patch_cosine_similarity(x)
        for i in range(4):
            for j in range(4):
                expect = x[i] @ x[j] / (np.linalg.norm(x[i]) * np.linalg.norm(x[j]))
                assert abs(sim[i, j] - expect) < 1e-12

    def test_symmetric_unit_diagonal_bounded(self):
        rng = np.random.default_rng(6)
        sim = patch_cosine_similarity(rng.standard_normal((12, 6)))
        assert np.array_equal(sim, sim.T)
        assert np.abs(np.diag(sim) - 1.0).max() < 1e-12
        assert sim.min() >= -1.0 and sim.max() <= 1.0

    def test_zero_rows_guarded(self):
        x = np.zeros((3, 4))
        x[1] = [1.0, 0, 0, 0]
        sim = patch_cosine_similarity(x)
        assert np.isfinite(sim).all()
        assert sim[0, 1] == 0.0

    def test_accepts_tensor(self):
        sim = patch_cosine_similarity(Tensor(np.eye(3)))
        assert np.allclose(sim, np.eye(3))
