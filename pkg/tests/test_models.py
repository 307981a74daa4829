import numpy as np
import pytest
import torch

from oovseg.config import ModelConfig, bench_config, full_config, variant_flags
from oovseg.models import (AudioEncoder, AudioTeacher, Decoder, FusionAttention,
                           ImageReconstructionHead, OracleAudioTeacher, OracleVisualTeacher,
                           SegmentationHead, Student, TeacherProjector, VisualEncoder,
                           VisualTeacher, load_checkpoint, save_checkpoint, stride16_hw)

BENCH = bench_config().model


def small_cfg(**kw):
    base = dict(preset="tiny", pano_hw=(32, 64), fpv_hw=(32, 32), base_width=8,
                feat_channels=8, audio_channels=8, decoder_width=8, head_width=8,
                spec_shape=(33, 30), audio_sample_rate=16000)
    base.update(kw)
    return ModelConfig(**base)


def test_visual_encoder_stride_law():
    enc = VisualEncoder(8, 16)
    torch.manual_seed(0)
    assert enc(torch.randn(1, 3, 480, 480)).shape[-2:] == (30, 30)
    assert enc(torch.randn(1, 3, 96, 96)).shape[-2:] == (6, 6)
    assert enc(torch.randn(1, 3, 64, 128)).shape[-2:] == (4, 8)


def test_visual_encoder_deterministic():
    torch.manual_seed(1)
    enc = VisualEncoder(8, 16).eval()
    x = torch.randn(2, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(enc(x), enc(x))


def test_audio_encoder_shape_and_linearity():
    enc = AudioEncoder(2, 8, 8, grid_hw=(2, 4), bias=False, norm=False).eval()
    zero = torch.zeros(2, 2, 33, 30)
    with torch.no_grad():
        out = enc(zero)
    assert out.shape == (2, 8, 2, 4)
    assert torch.all(out == 0)
    conv = enc.conv_features(zero)
    assert conv.shape[-2:] == (stride16_hw((33, 30)))


def test_audio_encoder_shape_is_input_function():
    enc = AudioEncoder(2, 8, 8, grid_hw=(3, 5)).eval()
    for f, t in ((33, 30), (65, 48)):
        with torch.no_grad():
            assert enc(torch.randn(1, 2, f, t)).shape == (1, 8, 3, 5)


def test_fusion_residual_identity_with_zero_mu():
    torch.manual_seed(0)
    fa = FusionAttention(6)
    with torch.no_grad():
        fa.mu.weight.zero_()
        fa.mu.bias.zero_()
    x = torch.randn(2, 6, 3, 3)
    with torch.no_grad():
        assert torch.equal(fa(x), x)


def dense_fusion_oracle(x, fa):
    """Explicit-matrix implementation of the fused attention update."""
    weights = {n: p.detach().double().numpy() for n, p in fa.named_parameters()}

    def lin(arr, name):
        w = weights[f"{name}.weight"][:, :, 0, 0]
        b = weights[f"{name}.bias"]
        return np.einsum("oc,chw->ohw", w, arr) + b[:, None, None]

    outs = []
    for sample in x.detach().double().numpy():
        c, h, w = sample.shape
        n = h * w
        q = lin(sample, "omega").reshape(c, n).T
        k = lin(sample, "phi").reshape(c, n).T
        v = lin(sample, "g").reshape(c, n).T
        attended = ((q @ k.T) / n @ v).T.reshape(c, h, w)
        outs.append(sample + lin(attended, "mu"))
    return np.stack(outs)


def test_fusion_dense_oracle():
    torch.manual_seed(2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        c = int(rng.integers(2, 8))
        h, w = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        fa = FusionAttention(c).double()
        x = torch.randn(2, c, h, w, dtype=torch.float64)
        with torch.no_grad():
            got = fa(x).numpy()
        want = dense_fusion_oracle(x, fa)
        rel = np.abs(got - want).max() / max(np.abs(want).max(), 1e-12)
        assert rel < 1e-5


def test_fusion_spatial_permutation_symmetry():
    # all maps are pointwise and attention is position symmetric
    torch.manual_seed(3)
    fa = FusionAttention(4).double().eval()
    x = torch.randn(1, 4, 3, 3, dtype=torch.float64)
    n = 9
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(5))
    xp = x.reshape(1, 4, n)[:, :, perm].reshape(1, 4, 3, 3)
    with torch.no_grad():
        z = fa(x).reshape(1, 4, n)
        zp = fa(xp).reshape(1, 4, n)
    assert torch.allclose(z[:, :, perm], zp, atol=1e-10)


def test_decoder_stage_size_law():
    # stage g emits (H, W) / 2^(g+1) under a stride-16 encoder, full and desk
    dec = Decoder(4, 8)
    for img in (480, 96):
        z = torch.randn(1, 4, img // 16, img // 16)
        sizes = [tuple(f.shape[-2:]) for f in dec.forward_stages(z)]
        assert sizes == [(img // 16,) * 2, (img // 8,) * 2, (img // 4,) * 2, (img // 2,) * 2]


def test_decoder_channel_width():
    dec = Decoder(4, 512)
    z = torch.randn(1, 4, 6, 6)
    for feat in dec.forward_stages(z):
        assert feat.shape[1] == 512


def test_full_preset_decoder_width_is_512():
    assert full_config().model.decoder_width == 512


def test_segmentation_head_contract():
    head = SegmentationHead(8, 8, 4, (32, 64))
    out = head(torch.randn(2, 8, 4, 8))
    assert out.shape == (2, 4, 32, 64)
    probs = torch.softmax(out, dim=1)
    assert torch.allclose(probs.sum(dim=1), torch.ones(2, 32, 64), atol=1e-6)
    # argmax tie-break: lowest class id wins on uniform logits
    uniform = np.zeros((4, 3, 3), dtype=np.float32)
    assert (uniform.argmax(0) == 0).all()


def test_recon_heads_shapes_and_grads():
    cfg = small_cfg()
    img_head = ImageReconstructionHead(8, 8, cfg.pano_hw)
    z = torch.randn(2, 8, 2, 4, requires_grad=True)
    img = img_head(z)
    assert img.shape == (2, 3, 32, 64)
    assert torch.isfinite(img).all()
    img.square().mean().backward()
    assert z.grad is not None and z.grad.abs().sum() > 0


def test_student_forward_shapes():
    torch.manual_seed(0)
    cfg = small_cfg()
    student = Student(cfg)
    out = student(torch.randn(2, 3, 32, 64), torch.randn(2, 2, 33, 30),
                  torch.tensor([0.0, 90.0]))
    assert out["seg"].shape == (2, 4, 32, 64)
    assert out["recon_image"].shape == (2, 3, 32, 64)
    assert out["recon_dsp"].shape == (2, 6, 33, 30)
    assert out["f_vs"].shape[-2:] == (2, 4)
    assert out["f_as"].shape[-2:] == (2, 4)


def test_student_input_size_validation():
    student = Student(small_cfg())
    with pytest.raises(ValueError, match="size"):
        student(torch.randn(1, 3, 16, 16), torch.randn(1, 2, 33, 30), torch.tensor([0.0]))
    with pytest.raises(ValueError, match="size"):
        student(torch.randn(1, 3, 32, 64), torch.randn(1, 2, 20, 20), torch.tensor([0.0]))


def test_student_variants_structure():
    cfg = small_cfg()
    visual_only = Student(cfg, variant_flags("SBV-V"))
    assert not hasattr(visual_only, "audio_encoder")
    out = visual_only(torch.randn(1, 3, 32, 64))
    assert "recon_image" not in out
    audio_only = Student(cfg, variant_flags("SBV-A"))
    assert not hasattr(audio_only, "visual_encoder")
    out = audio_only(None, torch.randn(1, 2, 33, 30), torch.tensor([45.0]))
    assert out["seg"].shape == (1, 4, 32, 64)
    with pytest.raises(ValueError):
        Student(cfg, variant_flags("SBV-V").__class__(visual_branch=False,
                                                      audio_branch=False))


def test_visual_teacher_contract():
    torch.manual_seed(0)
    cfg = small_cfg()
    teacher = VisualTeacher(cfg).eval()
    pano = torch.randn(2, 3, 32, 64)
    feat, logits = teacher(pano)
    assert logits.shape == (2, 4, 32, 64)
    assert feat.shape == (2, 8, 2, 4)
    with torch.no_grad():
        f2, l2 = teacher(pano)
    assert torch.equal(l2, teacher(pano)[1])


def test_audio_teacher_contract():
    torch.manual_seed(0)
    cfg = small_cfg()
    teacher = AudioTeacher(cfg).eval()
    sp8 = torch.randn(2, 8, 33, 30)
    feat, logits = teacher(sp8)
    assert logits.shape == (2, 4, 32, 64)
    assert feat.shape == (2, 8, 2, 4)
    with pytest.raises(ValueError):
        teacher(torch.randn(2, 8, 16, 16))


def test_oracle_teachers():
    cfg = small_cfg()
    gt = torch.randint(0, 4, (2, 32, 64))
    vt = OracleVisualTeacher(cfg, confidence=6.0)
    feat, logits = vt.infer(torch.zeros(2, 3, 32, 64), gt)
    assert logits.shape == (2, 4, 32, 64)
    assert torch.all(logits.argmax(1) == gt)
    assert torch.all(logits.max(dim=1).values == 6.0)
    assert feat.shape == (2, 8, 2, 4)
    at = OracleAudioTeacher(cfg)
    feat_a, logits_a = at.infer(torch.zeros(2, 8, 33, 30), gt)
    assert feat_a.shape == (2, 8, 2, 4)
    assert torch.all(logits_a.argmax(1) == gt)
    with pytest.raises(ValueError):
        vt.infer(torch.zeros(1, 3, 32, 64), None)


def test_teacher_projector():
    proj = TeacherProjector(6, 6).init_identity()
    x = torch.randn(2, 6, 4, 4)
    assert torch.allclose(proj(x, (4, 4)), x, atol=1e-6)
    out = proj(x, (3, 5))
    assert out.shape == (2, 6, 3, 5)
    x.requires_grad_(True)
    proj2 = TeacherProjector(6, 8)
    loss = proj2(x, (2, 2)).square().sum()
    loss.backward()
    assert proj2.proj.weight.grad is not None
    assert proj2.proj.weight.grad.abs().sum() > 0
    with pytest.raises(ValueError):
        TeacherProjector(4, 6).init_identity()


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(0)
    cfg = small_cfg()
    student = Student(cfg)
    path = save_checkpoint(tmp_path / "ck", student, cfg, kind="student",
                           variant="SBV-full", epoch=3, metrics={"val_miou": 0.5}, seed=7)
    clone = Student(cfg)
    manifest = load_checkpoint(path, clone, expected_cfg=cfg)
    assert manifest["epoch"] == 3
    for a, b in zip(student.state_dict().values(), clone.state_dict().values()):
        assert torch.equal(a, b)


def test_checkpoint_hash_mismatch(tmp_path):
    from oovseg.models import CheckpointError

    cfg = small_cfg()
    student = Student(cfg)
    path = save_checkpoint(tmp_path / "ck", student, cfg, kind="student", variant="SBV-full")
    other = small_cfg(decoder_width=16)
    with pytest.raises(CheckpointError, match="different model config"):
        load_checkpoint(path, Student(other), expected_cfg=other)


def test_checkpoint_tamper_detection(tmp_path):
    import json

    from oovseg.models import CheckpointError

    cfg = small_cfg()
    student = Student(cfg)
    path = save_checkpoint(tmp_path / "ck", student, cfg, kind="student", variant="SBV-full")
    sidecar = path.with_suffix(".json")
    manifest = json.loads(sidecar.read_text())
    manifest["model_config"]["decoder_width"] = 99
    sidecar.write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(path, Student(cfg))
