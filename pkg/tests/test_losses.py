import numpy as np
import pytest
import torch

from oovseg.config import LossWeights, bench_config, variant_flags
from oovseg.losses import (LossParts, feature_alignment_loss, l1_term, l2_term,
                           logits_distillation_loss, modality_reconstruction_loss,
                           total_loss)

torch.manual_seed(0)


def test_feature_alignment_zero_case():
    f = torch.randn(2, 3, 4, 4)
    a, v = feature_alignment_loss(f, f.clone(), f, f.clone())
    assert float(a) == 0.0 and float(v) == 0.0


def test_feature_alignment_unit_one_hot():
    teacher = torch.zeros(1, 2, 3, 3)
    student = teacher.clone()
    student[0, 1, 2, 2] = 1.0
    a, _ = feature_alignment_loss(teacher, student, teacher, teacher)
    assert float(a) == pytest.approx(1.0)


def test_feature_alignment_dense_oracle():
    rng = np.random.default_rng(0)
    at = rng.standard_normal((2, 3, 3, 2))
    as_ = rng.standard_normal((2, 3, 3, 2))
    vt = rng.standard_normal((2, 3, 3, 2))
    vs = rng.standard_normal((2, 3, 3, 2))
    audio, visual = feature_alignment_loss(*(torch.tensor(x) for x in (at, as_, vt, vs)),
                                           reduction="sum")
    want_audio = sum(np.sqrt(((as_[i] - at[i]) ** 2).sum()) for i in range(2))
    want_visual = sum(np.sqrt(((vs[i] - vt[i]) ** 2).sum()) for i in range(2))
    assert float(audio) == pytest.approx(want_audio, rel=1e-6)
    assert float(visual) == pytest.approx(want_visual, rel=1e-6)


def test_feature_alignment_shape_mismatch():
    with pytest.raises(ValueError):
        feature_alignment_loss(torch.zeros(1, 2), torch.zeros(1, 3),
                               torch.zeros(1, 2), torch.zeros(1, 2))


def test_logits_distillation_zero_and_constant_offset():
    logits = torch.randn(1, 4, 6, 5)
    a, v = logits_distillation_loss(logits, logits.clone(), logits.clone())
    assert float(a) == 0.0 and float(v) == 0.0
    c = 0.37
    student = logits + c
    a, v = logits_distillation_loss(logits, logits.clone(), student, reduction="sum")
    want = c * 4 * 6 * 5
    assert float(a) == pytest.approx(want, rel=1e-5)
    assert float(v) == pytest.approx(want, rel=1e-5)


def test_logits_distillation_dense_oracle():
    rng = np.random.default_rng(1)
    at = rng.standard_normal((3, 4, 2, 2))
    vt = rng.standard_normal((3, 4, 2, 2))
    s = rng.standard_normal((3, 4, 2, 2))
    a, v = logits_distillation_loss(torch.tensor(at), torch.tensor(vt), torch.tensor(s),
                                    reduction="sum")
    assert float(a) == pytest.approx(np.abs(s - at).sum(), rel=1e-6)
    assert float(v) == pytest.approx(np.abs(s - vt).sum(), rel=1e-6)


def test_reconstruction_zero_and_one_hot():
    dsp = torch.randn(2, 6, 5, 4)
    img = torch.randn(2, 3, 8, 8)
    a, v = modality_reconstruction_loss(dsp, dsp.clone(), img, img.clone())
    assert float(a) == 0.0 and float(v) == 0.0
    bad = img.clone()
    bad[0, 0, 0, 0] += 1.0
    _, v = modality_reconstruction_loss(dsp, dsp, img, bad, reduction="sum")
    assert float(v) == pytest.approx(1.0)


def test_teacher_side_gradient_stopped():
    teacher = torch.randn(2, 3, 4, 4, requires_grad=True)
    student = torch.randn(2, 3, 4, 4, requires_grad=True)
    a, _ = feature_alignment_loss(teacher, student, teacher, student)
    a.backward()
    assert teacher.grad is None
    assert student.grad is not None


def test_total_loss_zero_weights():
    parts = LossParts(*(torch.tensor(1.0) for _ in range(6)))
    zero = LossWeights(0, 0, 0, 0, 0, 0)
    assert float(total_loss(parts, zero)) == 0.0


def test_total_loss_default_composite():
    # unit components with paper default weights: 0.05+0.05+0.1+0.4+0.02+0.02
    parts = LossParts(*(torch.tensor(1.0) for _ in range(6)))
    assert float(total_loss(parts, LossWeights())) == pytest.approx(0.64)


def test_total_loss_missing_part_with_weight():
    parts = LossParts(fal_a=torch.tensor(1.0))
    with pytest.raises(ValueError, match="ldl_a"):
        total_loss(parts, LossWeights(lambda_v=0.0, beta_v=0.0, gamma_a=0.0, gamma_v=0.0))


def test_zero_weight_removes_gradient_path():
    x = torch.tensor(2.0, requires_grad=True)
    y = torch.tensor(3.0, requires_grad=True)
    parts = LossParts(fal_a=x * x, ldl_v=y * y)
    w = LossWeights(lambda_a=0.5, lambda_v=0.0, beta_a=0.0, beta_v=0.0,
                    gamma_a=0.0, gamma_v=0.0)
    total = total_loss(parts, w)
    total.backward()
    assert x.grad is not None and float(x.grad) == pytest.approx(2.0)
    assert y.grad is None


def test_element_reduction_modes():
    target = torch.zeros(1, 2, 3)
    pred = torch.ones(1, 2, 3)
    assert float(l1_term(target, pred, element_reduction="sum")) == pytest.approx(6.0)
    assert float(l1_term(target, pred, element_reduction="mean")) == pytest.approx(1.0)
    assert float(l2_term(target, pred, element_reduction="norm")) \
        == pytest.approx(np.sqrt(6.0))
    assert float(l2_term(target, pred, element_reduction="rms")) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        l1_term(target, pred, element_reduction="weird")


def _micro_setup():
    from oovseg.config import ModelConfig
    from oovseg.models import Student

    cfg = ModelConfig(preset="micro", pano_hw=(8, 8), fpv_hw=(8, 8), base_width=4,
                      feat_channels=4, audio_channels=4, decoder_width=4, head_width=4,
                      spec_shape=(9, 9), audio_sample_rate=16000, student_view="perspective")
    torch.manual_seed(0)
    student = Student(cfg).double()
    # push pre-activations away from ReLU kinks so the finite-difference
    # probe stays on a smooth branch (dead units break central differences)
    with torch.no_grad():
        for name, p in student.named_parameters():
            if name.endswith("bias"):
                p += 0.3
    rng = np.random.default_rng(0)
    batch = {
        "view": torch.tensor(rng.uniform(0, 1, (2, 3, 8, 8))),
        "isp": torch.tensor(rng.uniform(0, 1, (2, 2, 9, 9))),
        "facing": torch.tensor([0.0, 90.0], dtype=torch.float64),
        "dsp": torch.tensor(rng.standard_normal((2, 6, 9, 9))),
        "pano": torch.tensor(rng.uniform(0, 1, (2, 3, 8, 8))),
    }
    targets = {
        "vt_feat": torch.tensor(rng.standard_normal((2, 4, 1, 1))),
        "at_feat": torch.tensor(rng.standard_normal((2, 4, 1, 1))),
        "at_logits": torch.tensor(rng.standard_normal((2, 4, 8, 8))),
        "vt_logits_masked": torch.tensor(rng.standard_normal((2, 4, 8, 8))),
        "pseudo_labels": torch.tensor(rng.integers(0, 4, (2, 8, 8))),
    }
    return cfg, student, batch, targets


def micro_total_loss(student, batch, targets, cfg_exp, flags, weights):
    from oovseg.training import student_step_losses

    _, parts, ce, loss = student_step_losses(student, batch, targets, cfg_exp, flags,
                                             weights)
    return loss


def test_gradcheck_total_loss_micro_model():
    # autodiff vs central finite differences at double precision
    import dataclasses

    cfg, student, batch, targets = _micro_setup()
    exp = dataclasses.replace(bench_config(), model=cfg)
    flags = variant_flags("SBV-full")
    weights = LossWeights()

    loss = micro_total_loss(student, batch, targets, exp, flags, weights)
    params = [p for p in student.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params)

    rng = np.random.default_rng(3)
    eps = 1e-6
    checked = 0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        gflat = g.reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(2, flat.numel()), replace=False):
            orig = float(flat[idx])
            flat[idx] = orig + eps
            up = float(micro_total_loss(student, batch, targets, exp, flags, weights))
            flat[idx] = orig - eps
            down = float(micro_total_loss(student, batch, targets, exp, flags, weights))
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            ad = float(gflat[idx])
            if max(abs(fd), abs(ad)) < 1e-6:  # below FD cancellation noise
                checked += 1
                continue
            denom = max(abs(fd), abs(ad))
            assert abs(fd - ad) / denom < 1e-3, (fd, ad)
            checked += 1
    assert checked >= 20
