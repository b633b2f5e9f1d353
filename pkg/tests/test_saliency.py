"""Saliency maps: closed-form checks and invariance properties."""

import numpy as np
import pytest
import torch

from amykd.errors import DataError
from amykd.saliency import (
    SaliencyMap,
    gradient_saliency,
    gradient_saliency_fn,
    hirescam,
    hirescam_fn,
)


class TestSaliencyMap:
    def test_nonnegative_and_normalized(self):
        raw = np.array([[[-1.0, 2.0], [0.5, 4.0]]])
        m = SaliencyMap.from_raw(raw)
        assert m.per_slice.min() >= 0.0
        assert m.per_slice.max() == 1.0
        assert m.aggregated.shape == (2, 2)

    def test_all_negative_becomes_zero(self):
        m = SaliencyMap.from_raw(np.full((2, 3, 3), -5.0))
        assert m.per_slice.max() == 0.0

    def test_aggregate_is_max_over_slices(self):
        raw = np.zeros((2, 2, 2))
        raw[0, 0, 0] = 1.0
        raw[1, 1, 1] = 0.5
        m = SaliencyMap.from_raw(raw)
        assert m.aggregated[0, 0] == 1.0 and m.aggregated[1, 1] == 0.5


class TestGradientSaliency:
    def test_linear_model_closed_form(self):
        w = torch.tensor([1.0, -2.0, 3.0])
        grads = gradient_saliency_fn(lambda x: (x * w).sum(), torch.zeros(3))
        assert np.allclose(grads, np.abs(w.numpy()))

    def test_zero_weight_model(self):
        grads = gradient_saliency_fn(lambda x: (x * 0.0).sum(), torch.rand(4))
        assert np.all(grads == 0.0)

    def test_nonscalar_score_rejected(self):
        with pytest.raises(DataError):
            gradient_saliency_fn(lambda x: x, torch.rand(3))

    def test_relu_net_scale_invariant_argmax(self):
        # Bias-free ReLU networks are positively homogeneous, so the
        # saliency argmax cannot move when the input is doubled.
        torch.manual_seed(0)
        lin1 = torch.nn.Linear(6, 8, bias=False)
        lin2 = torch.nn.Linear(8, 1, bias=False)

        def score(x):
            return lin2(torch.relu(lin1(x))).sum()

        for seed in range(10):
            x = torch.randn(6, generator=torch.Generator().manual_seed(seed))
            g1 = gradient_saliency_fn(score, x)
            g2 = gradient_saliency_fn(score, 2.0 * x)
            assert int(np.argmax(g1)) == int(np.argmax(g2))

    def test_student_path_map_shape(self, tiny_net):
        m = gradient_saliency(tiny_net, torch.rand(3, 224, 224))
        assert m.per_slice.shape == (3, 224, 224)
        assert m.aggregated.shape == (224, 224)
        assert m.per_slice.min() >= 0.0


class TestHiResCAM:
    def test_linear_toy_closed_form(self):
        # At the input layer, hirescam of z = w.x is ReLU(x * w) per
        # position (channel dimension of size 1).
        w = torch.tensor([0.5, -1.0, 2.0])
        x = torch.tensor([1.0, 1.0, -3.0])

        cam = hirescam_fn(lambda a: (a.squeeze(-1) * w).sum(),
                          lambda inp: inp.unsqueeze(-1), x)
        expected = np.maximum((x * w).numpy(), 0.0)
        assert np.allclose(cam, expected, atol=1e-6)

    def test_uniform_when_signs_agree(self):
        cam = hirescam_fn(lambda a: a.sum(), lambda inp: inp.unsqueeze(-1),
                          torch.ones(5))
        assert np.allclose(cam, cam[0])

    def test_negative_contributions_rectified(self):
        cam = hirescam_fn(lambda a: a.sum(), lambda inp: inp.unsqueeze(-1),
                          -torch.ones(5))
        assert np.all(cam == 0.0)

    def test_backbone_map_properties(self, tiny_net):
        m = hirescam(tiny_net, torch.rand(2, 224, 224))
        assert m.per_slice.shape == (2, 224, 224)
        assert m.per_slice.min() >= 0.0
        assert m.per_slice.max() <= 1.0

    def test_batched_stack_rejected(self, tiny_net):
        with pytest.raises(DataError):
            hirescam(tiny_net, torch.rand(2, 3, 224, 224))
