"""Network components: LoRA, backbone, heads, teacher/student paths."""

import pytest
import torch

from amykd.errors import DataError
from amykd.nets import (
    AmyloidNet,
    AttentionPool,
    BackboneSpec,
    ClassifierHead,
    LoRAConfig,
    LoRALinear,
    TinyViT,
    l2_normalize,
    lora_effective_weight,
    make_student,
)

from conftest import tiny_backbone_spec

torch.manual_seed(0)


class TestLoRA:
    def test_hand_matrix_product(self):
        w0 = torch.eye(2)
        b = torch.tensor([[0.0], [1.0]])
        a = torch.tensor([[1.0, 0.0]])
        w = lora_effective_weight(w0, a, b, alpha=2.0, r=1)
        assert torch.allclose(w, torch.tensor([[1.0, 0.0], [2.0, 1.0]]))

    def test_identity_at_init(self):
        torch.manual_seed(1)
        base = torch.nn.Linear(16, 16)
        wrapped = LoRALinear(base, LoRAConfig(rank=4, alpha=4))
        for _ in range(20):
            x = torch.randn(3, 16)
            assert torch.allclose(wrapped(x), base(x), atol=1e-6)

    def test_zero_b_init(self):
        wrapped = LoRALinear(torch.nn.Linear(8, 8), LoRAConfig(rank=2, alpha=2))
        assert torch.all(wrapped.lora_b == 0)
        assert not torch.all(wrapped.lora_a == 0)

    def test_frozen_base_gets_no_gradient(self):
        torch.manual_seed(2)
        spec = tiny_backbone_spec()
        net = TinyViT(spec, LoRAConfig(rank=2, alpha=2))
        net.freeze_base()
        out = net(torch.randn(2, 1, 224, 224))
        out.sum().backward()
        for name, p in net.named_parameters():
            if "lora_" in name:
                assert p.requires_grad
            else:
                assert not p.requires_grad and p.grad is None

    def test_shape_mismatch_rejected(self):
        from amykd.errors import ConfigurationError
        with pytest.raises(ConfigurationError):
            lora_effective_weight(torch.eye(2), torch.zeros(1, 3), torch.zeros(2, 1),
                                  alpha=1.0, r=1)


class TestBackbone:
    def test_embedding_shape(self, tiny_net):
        stacks = torch.rand(1, 5, 224, 224)
        feats = tiny_net.encode_slices(stacks)
        assert feats.shape == (1, 5, 768)

    def test_identical_slices_identical_rows(self, tiny_net):
        one = torch.rand(224, 224)
        stacks = one.expand(1, 4, 224, 224).clone()
        feats = tiny_net.encode_slices(stacks)
        for i in range(1, 4):
            assert torch.allclose(feats[0, 0], feats[0, i], atol=1e-6)

    def test_reproducible_outputs(self):
        def checksum():
            torch.manual_seed(123)
            net = TinyViT(tiny_backbone_spec(), None).eval()
            x = torch.linspace(0, 1, 224 * 224).reshape(1, 1, 224, 224)
            with torch.no_grad():
                return net(x).sum().item()

        assert checksum() == checksum()

    def test_wrong_slice_size_rejected(self, tiny_net):
        with pytest.raises(DataError):
            tiny_net.encode_slices(torch.rand(1, 2, 64, 64))


class TestAttentionPool:
    def _pool_with_scores(self, raw_scores):
        """Pool whose pre-temperature score of slice i is raw_scores[i]."""
        pool = AttentionPool()
        with torch.no_grad():
            pool.score.weight.zero_()
            pool.score.weight[0, : len(raw_scores)] = 1.0
            pool.score.bias.zero_()
        x = torch.zeros(1, len(raw_scores), 128)
        for i, s in enumerate(raw_scores):
            x[0, i, i] = s
        return pool, x

    def test_equal_scores_give_mean(self):
        pool = AttentionPool()
        x = torch.rand(1, 1, 128)
        pooled, alpha = pool(x)
        assert torch.allclose(pooled, x[0, 0])
        assert torch.allclose(alpha, torch.ones(1, 1))

    def test_temperature_softmax_reference(self):
        pool, x = self._pool_with_scores([2.0, 0.0, 0.0])
        _, alpha = pool(x)
        expected = torch.tensor([[0.5761, 0.2119, 0.2119]])
        assert torch.allclose(alpha, expected, atol=5e-4)

    def test_weights_sum_to_one(self):
        pool = AttentionPool()
        _, alpha = pool(torch.randn(4, 9, 128))
        assert torch.allclose(alpha.sum(dim=-1), torch.ones(4), atol=1e-6)

    def test_permutation_invariance(self):
        torch.manual_seed(3)
        pool = AttentionPool()
        x = torch.randn(1, 7, 128)
        perm = torch.randperm(7)
        pooled_a, _ = pool(x)
        pooled_b, _ = pool(x[:, perm])
        assert torch.allclose(pooled_a, pooled_b, atol=1e-6)


class TestClassifier:
    def test_zero_weights_zero_logit(self):
        head = ClassifierHead().eval()
        with torch.no_grad():
            for p in head.parameters():
                p.zero_()
        assert head(torch.randn(3, 128)).abs().max() == 0.0

    def test_eval_deterministic(self):
        head = ClassifierHead().eval()
        x = torch.randn(2, 128)
        assert torch.equal(head(x), head(x))

    def test_reinit_bound(self):
        # Xavier uniform with gain 0.5 on a (1, 64) layer stays within
        # 0.5 * sqrt(6 / 65) elementwise.
        bound = 0.5 * (6.0 / 65.0) ** 0.5
        for seed in range(10):
            torch.manual_seed(seed)
            head = ClassifierHead()
            head.reinit_output()
            assert head.fc2.weight.abs().max() <= bound + 1e-8
            assert head.fc2.bias.abs().max() == 0.0


class TestAmyloidNet:
    def test_forward_shapes(self, tiny_net):
        mri = torch.rand(2, 4, 224, 224)
        pet = torch.rand(2, 4, 224, 224)
        e, z, alpha = tiny_net.forward_teacher(pet, mri)
        assert e.shape == (2, 128) and z.shape == (2,) and alpha.shape == (2, 4)
        e, z, alpha = tiny_net.forward_student(mri)
        assert e.shape == (2, 128) and z.shape == (2,)

    def test_teacher_requires_pet(self, tiny_net):
        with pytest.raises(DataError):
            tiny_net.forward_teacher(None, torch.rand(1, 2, 224, 224))

    def test_student_ignores_pet_by_construction(self, tiny_net):
        mri = torch.rand(1, 3, 224, 224)
        with torch.no_grad():
            _, z1, _ = tiny_net.forward_student(mri)
            _, z2, _ = tiny_net.forward_student(mri.clone())
        assert torch.allclose(z1, z2)

    def test_teacher_logit_varies_with_pet(self, tiny_net):
        # Queries carry signal: with per-slice MRI variation the PET side
        # changes the attention mix and hence the logit. (A constant MRI
        # stack would pin the output regardless of PET: identical value
        # vectors make every softmax mix equal.)
        torch.manual_seed(5)
        mri = torch.rand(1, 3, 224, 224)
        with torch.no_grad():
            _, z_flat, _ = tiny_net.forward_teacher(torch.zeros(1, 3, 224, 224), mri)
            _, z_hot, _ = tiny_net.forward_teacher(torch.rand(1, 3, 224, 224), mri)
        assert abs(float(z_flat) - float(z_hot)) > 1e-6

    def test_self_attention_slice_equivariance(self, tiny_net):
        torch.manual_seed(4)
        e = torch.randn(1, 6, 128)
        perm = torch.randperm(6)
        with torch.no_grad():
            out = tiny_net.self_attend(e)
            out_perm = tiny_net.self_attend(e[:, perm])
        assert torch.allclose(out[:, perm], out_perm, atol=1e-5)

    def test_param_groups_partition(self, tiny_net):
        groups = tiny_net.param_groups()
        grouped = [id(p) for ps in groups.values() for p in ps]
        assert sorted(grouped) == sorted(id(p) for p in tiny_net.parameters())
        assert groups["adapters"] and groups["projection"] and groups["classifier"]

    def test_dropout_profiles(self, tiny_net):
        tiny_net.set_dropout_profile("student")
        assert tiny_net.projection.drop1.p == 0.3
        assert tiny_net.classifier.drop.p == 0.4
        tiny_net.set_dropout_profile("teacher")
        assert tiny_net.projection.drop1.p == 0.5
        assert tiny_net.classifier.drop.p == 0.6


class TestStudentInit:
    def test_student_copies_teacher_but_reinits_output(self, tiny_net):
        student = make_student(tiny_net)
        assert torch.equal(student.projection.fc1.weight, tiny_net.projection.fc1.weight)
        assert not torch.equal(student.classifier.fc2.weight, tiny_net.classifier.fc2.weight)
        assert student.classifier.fc2.bias.abs().max() == 0.0

    def test_student_backbone_base_frozen(self, tiny_net):
        student = make_student(tiny_net)
        for name, p in student.backbone.named_parameters():
            assert p.requires_grad == ("lora_" in name)

    def test_teacher_untouched(self, tiny_net):
        before = {n: p.clone() for n, p in tiny_net.named_parameters()}
        make_student(tiny_net)
        for n, p in tiny_net.named_parameters():
            assert torch.equal(before[n], p)


def test_l2_normalize():
    x = torch.tensor([[3.0, 4.0]])
    assert torch.allclose(l2_normalize(x), torch.tensor([[0.6, 0.8]]), atol=1e-6)
    assert l2_normalize(torch.zeros(1, 4)).abs().max() == 0.0
