"""Encoders, decoder, heads, the audio-visual student, and both teachers."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig, VariantFlags
from .blocks import ConvBlock, DilatedContextBlock, ResidualBlock, append_coords
from .fusion import AudioVisualFusion

ENCODER_STRIDE = 16


def stride16_hw(hw):
    """Output grid of four stride-2 convs (k=3, p=1): ceil(n / 16) per axis."""
    return tuple(-(-int(n) // ENCODER_STRIDE) for n in hw)


class VisualEncoder(nn.Module):
    """Residual downsampling encoder (stride 16) with a dilated context block.

    forward() returns the context feature; forward_pyramid() additionally
    returns the stride 2/4/8 stage outputs for decoders with skips.
    """

    def __init__(self, base_width: int, out_channels: int, dilations=(1, 2, 4), in_channels=3):
        super().__init__()
        w = base_width
        self.stem = ConvBlock(in_channels, w, stride=2)
        self.stage1 = ResidualBlock(w, w * 2, stride=2)
        self.stage2 = ResidualBlock(w * 2, w * 4, stride=2)
        self.stage3 = ResidualBlock(w * 4, w * 4, stride=2)
        self.context = DilatedContextBlock(w * 4, out_channels, dilations)
        self.skip_channels = (w, w * 2, w * 4)

    def forward_pyramid(self, x):
        s2 = self.stem(x)
        s4 = self.stage1(s2)
        s8 = self.stage2(s4)
        s16 = self.stage3(s8)
        return self.context(s16), (s2, s4, s8)

    def forward(self, x):
        return self.forward_pyramid(x)[0]


class AudioConvStack(nn.Module):
    """Strided 2-D conv stack over log-magnitude spectrograms."""

    def __init__(self, in_channels: int, base_width: int, out_channels: int, bias=True,
                 norm=True):
        super().__init__()
        w = base_width
        self.net = nn.Sequential(
            ConvBlock(in_channels, w, stride=2, bias=bias, norm=norm),
            ConvBlock(w, w * 2, stride=2, bias=bias, norm=norm),
            ConvBlock(w * 2, w * 4, stride=2, bias=bias, norm=norm),
            ConvBlock(w * 4, out_channels, stride=2, bias=bias, norm=norm),
        )

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    """Four upsampling stages; stage g emits width channels at 2^(3-g) x input scale.

    Under a stride-16 encoder that puts stage outputs at 1/16, 1/8, 1/4 and
    1/2 of the image. Optional skip features (stride 8, 4, 2 order) are fused
    into stages 2..0; optional coordinate channels are appended to every
    stage input.
    """

    def __init__(self, in_channels: int, width: int, skip_channels=None,
                 coord_channels: bool = False):
        super().__init__()
        self.coord_channels = coord_channels
        skip_channels = tuple(skip_channels) if skip_channels else (0, 0, 0)
        extra = 2 if coord_channels else 0
        self.stage3 = ConvBlock(in_channels + extra, width)
        self.stage2 = ConvBlock(width + skip_channels[0] + extra, width)
        self.stage1 = ConvBlock(width + skip_channels[1] + extra, width)
        self.stage0 = ConvBlock(width + skip_channels[2] + extra, width)

    def _run(self, stage, x, skip):
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        if self.coord_channels:
            x = append_coords(x)
        return stage(x)

    def forward_stages(self, z, skips=None):
        s8, s4, s2 = skips if skips is not None else (None, None, None)
        up = lambda t: F.interpolate(t, scale_factor=2, mode="bilinear", align_corners=False)
        f3 = self._run(self.stage3, z, None)
        f2 = self._run(self.stage2, up(f3), s8)
        f1 = self._run(self.stage1, up(f2), s4)
        f0 = self._run(self.stage0, up(f1), s2)
        return [f3, f2, f1, f0]

    def forward(self, z, skips=None):
        return self.forward_stages(z, skips)[-1]


class SegmentationHead(nn.Module):
    """Three conv layers and one interpolation restoring the output grid.

    The interpolation sits after the first conv so the final two layers
    refine boundaries at full resolution.
    """

    def __init__(self, in_channels: int, width: int, k_classes: int, out_hw):
        super().__init__()
        self.out_hw = tuple(out_hw)
        self.pre = ConvBlock(in_channels, width)
        self.post = nn.Sequential(
            ConvBlock(width, width),
            nn.Conv2d(width, k_classes, 3, padding=1),
        )

    def forward(self, x):
        up = F.interpolate(self.pre(x), size=self.out_hw, mode="bilinear",
                           align_corners=False)
        return self.post(up)


class ImageReconstructionHead(nn.Module):
    """Five conv layers and one upsampling to the panorama size; RGB in [0, 1]."""

    def __init__(self, in_channels: int, width: int, out_hw):
        super().__init__()
        self.out_hw = tuple(out_hw)
        self.net = nn.Sequential(
            ConvBlock(in_channels, width),
            ConvBlock(width, width),
            ConvBlock(width, width),
            ConvBlock(width, width),
            nn.Conv2d(width, 3, 3, padding=1),
        )

    def forward(self, z):
        out = F.interpolate(self.net(z), size=self.out_hw, mode="bilinear",
                            align_corners=False)
        return torch.sigmoid(out)


class AudioReconstructionHead(nn.Module):
    """Five conv layers, then interpolation to the difference-spectrogram grid."""

    def __init__(self, in_channels: int, width: int, out_shape):
        super().__init__()
        self.out_shape = tuple(out_shape)  # (channels, F, Tm)
        self.net = nn.Sequential(
            ConvBlock(in_channels, width),
            ConvBlock(width, width),
            ConvBlock(width, width),
            ConvBlock(width, width),
            nn.Conv2d(width, self.out_shape[0], 3, padding=1),
        )

    def forward(self, z):
        return F.interpolate(self.net(z), size=self.out_shape[1:], mode="bilinear",
                             align_corners=False)


class TeacherProjector(nn.Module):
    """Channel-linear map plus interpolation aligning teacher features to the student's.

    Training-time only; discarded at inference.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, out_channels, 1)

    def init_identity(self):
        if self.proj.in_channels != self.proj.out_channels:
            raise ValueError("identity init needs matching channel counts")
        with torch.no_grad():
            self.proj.weight.zero_()
            for c in range(self.proj.in_channels):
                self.proj.weight[c, c, 0, 0] = 1.0
            self.proj.bias.zero_()
        return self

    def forward(self, feat, target_hw):
        out = self.proj(feat)
        if out.shape[-2:] != tuple(target_hw):
            out = F.interpolate(out, size=tuple(target_hw), mode="bilinear",
                                align_corners=False)
        return out


def _check_hw(tensor, expected, what):
    if tuple(tensor.shape[-2:]) != tuple(expected):
        raise ValueError(f"{what} size {tuple(tensor.shape[-2:])} does not match "
                         f"configured {tuple(expected)}")


class Student(nn.Module):
    """Limited-view + binaural-spectrogram student emitting panorama-frame output.

    The visual input is either the masked panorama canvas or the raw
    perspective crop, per cfg.student_view; in canvas mode encoder pyramid
    skips feed the decoder since input and output share the panorama frame.
    Pathways are gated by VariantFlags; the teacher projector lives here so a
    checkpoint restores training state, but inference never calls it.
    """

    def __init__(self, cfg: ModelConfig, flags: VariantFlags = VariantFlags()):
        super().__init__()
        if not flags.visual_branch and not flags.audio_branch:
            raise ValueError("at least one input branch must stay enabled")
        self.cfg = cfg
        self.flags = flags
        self.view_hw = tuple(cfg.student_view_hw)
        self.use_skips = flags.visual_branch and cfg.student_view == "masked_pano"
        fused = 0
        skip_channels = None
        if flags.visual_branch:
            self.visual_encoder = VisualEncoder(cfg.base_width, cfg.feat_channels,
                                                cfg.aspp_dilations)
            fused += cfg.feat_channels
            if self.use_skips:
                skip_channels = self.visual_encoder.skip_channels[::-1]
        if flags.audio_branch:
            self.audio_encoder = AudioEncoder(2, cfg.base_width, cfg.audio_channels,
                                              stride16_hw(cfg.student_view_hw))
            self.steering = BinauralSteering(stride16_hw(cfg.student_view_hw),
                                             cfg.spec_shape, cfg.audio_sample_rate)
            fused += cfg.audio_channels
        if flags.visual_branch and flags.audio_branch:
            self.fusion = AudioVisualFusion(cfg.feat_channels, cfg.audio_channels,
                                            use_attention=flags.fusion_attention)
        self.grid_hw = stride16_hw(self.view_hw)
        steer_ch = self.steering.out_channels if flags.audio_branch else 0
        self.decoder = Decoder(fused + steer_ch, cfg.decoder_width,
                               skip_channels=skip_channels,
                               coord_channels=cfg.coord_channels)
        self.seg_head = SegmentationHead(cfg.decoder_width, cfg.head_width, cfg.k_classes,
                                         cfg.pano_hw)
        if flags.reconstruction:
            self.image_recon = ImageReconstructionHead(fused, cfg.head_width, cfg.pano_hw)
            self.audio_recon = AudioReconstructionHead(fused, cfg.head_width,
                                                       (6, *cfg.spec_shape))
        if flags.distill_visual:
            self.teacher_proj = TeacherProjector(cfg.feat_channels, cfg.feat_channels)

    def encode(self, view=None, isp=None):
        f_vs = f_as = skips = None
        if self.flags.visual_branch:
            _check_hw(view, self.view_hw, "student view image")
            if self.use_skips:
                f_vs, (s2, s4, s8) = self.visual_encoder.forward_pyramid(view)
                skips = (s8, s4, s2)
            else:
                f_vs = self.visual_encoder(view)
        if self.flags.audio_branch:
            _check_hw(isp, self.cfg.spec_shape, "input spectrogram")
            f_as = self.audio_encoder(isp)
        if f_vs is not None and f_as is not None:
            z = self.fusion(f_vs, f_as)
        elif f_vs is not None:
            z = f_vs
        else:
            z = F.interpolate(f_as, size=self.grid_hw, mode="bilinear", align_corners=False)
        return f_vs, f_as, z, skips

    def forward(self, view=None, isp=None, facing_deg=None):
        f_vs, f_as, z, skips = self.encode(view, isp)
        dec_in = z
        if self.flags.audio_branch:
            if facing_deg is None:
                raise ValueError("audio branch needs facing_deg of the selected pair")
            steer = self.steering(isp, facing_deg)
            dec_in = torch.cat([z, steer], dim=1)
        out = {
            "f_vs": f_vs,
            "f_as": f_as,
            "fused": z,
            "seg": self.seg_head(self.decoder(dec_in, skips=skips)),
        }
        if self.flags.reconstruction:
            out["recon_image"] = self.image_recon(z)
            out["recon_dsp"] = self.audio_recon(z)
        return out


class VisualTeacher(nn.Module):
    """Panorama segmenter: encoder feature plus full-resolution logits."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = VisualEncoder(cfg.base_width, cfg.feat_channels, cfg.aspp_dilations)
        self.decoder = Decoder(cfg.feat_channels, cfg.decoder_width,
                               skip_channels=self.encoder.skip_channels[::-1],
                               coord_channels=cfg.coord_channels)
        self.seg_head = SegmentationHead(cfg.decoder_width, cfg.head_width, cfg.k_classes,
                                         cfg.pano_hw)

    def forward(self, pano):
        _check_hw(pano, self.cfg.pano_hw, "panorama")
        feat, (s2, s4, s8) = self.encoder.forward_pyramid(pano)
        logits = self.seg_head(self.decoder(feat, skips=(s8, s4, s2)))
        return feat, logits

    def infer(self, pano, gt=None):
        return self.forward(pano)


class AudioSpatialUnfold(nn.Module):
    """Pool a freq-time feature map and unfold it onto a panorama-frame grid.

    Spectrogram axes carry no panorama geometry, so the spatial layout has to
    be learned: a pooled embedding passes through a fully connected layer
    whose output reshapes to channels x grid, giving every grid cell its own
    learned read-out of the audio evidence.
    """

    def __init__(self, in_channels: int, out_channels: int, grid_hw, embed: int = 64,
                 bias=True):
        super().__init__()
        self.grid_hw = tuple(grid_hw)
        self.out_channels = out_channels
        n = self.grid_hw[0] * self.grid_hw[1]
        self.mlp = nn.Sequential(
            nn.Linear(in_channels, embed, bias=bias), nn.ReLU(inplace=True),
            nn.Linear(embed, embed, bias=bias), nn.ReLU(inplace=True),
        )
        self.unfold = nn.Linear(embed, out_channels * n, bias=bias)

    def forward(self, feat):
        pooled = feat.mean(dim=(-2, -1))
        emb = self.mlp(pooled)
        return self.unfold(emb).reshape(-1, self.out_channels, *self.grid_hw)


class AudioEncoder(nn.Module):
    """Audio encoder: conv stack over the spectrogram, spatially unfolded.

    The output feature map lives on a panorama-frame grid so alignment with
    visual features (and audio feature distillation) is geometrically
    meaningful.  conv_features() exposes the raw freq-time stack.
    """

    def __init__(self, in_channels: int, base_width: int, out_channels: int, grid_hw,
                 bias=True, norm=True):
        super().__init__()
        self.convs = AudioConvStack(in_channels, base_width, out_channels, bias=bias,
                                    norm=norm)
        self.unfold = AudioSpatialUnfold(out_channels, out_channels, grid_hw, bias=bias)

    def conv_features(self, x):
        return self.convs(x)

    def forward(self, x):
        return self.unfold(self.convs(x))


# Filterbank edges (Hz) roughly bracketing the three source signatures.
STEERING_BANDS = ((0.0, 24000.0), (30.0, 250.0), (150.0, 1600.0), (1500.0, 4500.0))


class SteeringMap(nn.Module):
    """Directional energy profiles over panorama columns from pair loudness.

    A delay-and-sum style prior using only the public microphone layout: per
    frequency band, each pair's mean spectrogram energy spreads over azimuth
    as a cosine lobe around the pair's facing direction, tiled over rows.
    One broadband channel plus one channel per signature band.  Purely a
    fixed transform of the input; the learned path does the segmentation.
    """

    def __init__(self, grid_hw, spec_shape, sample_rate, bands=STEERING_BANDS,
                 kappa: float = 8.0):
        super().__init__()
        from ..audio import PAIR_TABLE

        self.grid_hw = tuple(grid_hw)
        self.out_channels = 3 * len(bands)
        self.kappa = kappa
        h, w = self.grid_hw
        n_freqs = spec_shape[0]
        n_fft = 2 * (n_freqs - 1)
        bin_hz = sample_rate / n_fft
        freqs = torch.arange(n_freqs, dtype=torch.float32) * bin_hz
        band_rows = torch.stack([((freqs >= lo) & (freqs <= hi)).float() for lo, hi in bands])
        band_rows = band_rows / band_rows.sum(dim=1, keepdim=True).clamp(min=1.0)
        az = torch.deg2rad((torch.arange(w, dtype=torch.float32) + 0.5) * (360.0 / w) - 180.0)
        ear_rows = torch.zeros(len(PAIR_TABLE), 8)
        lobes = torch.zeros(len(PAIR_TABLE), w)
        facing_vecs = torch.zeros(len(PAIR_TABLE), 2)
        for p, (left, right, facing) in enumerate(PAIR_TABLE.values()):
            ear_rows[p, left - 1] = 0.5
            ear_rows[p, right - 1] = 0.5
            rad = torch.deg2rad(torch.tensor(facing))
            lobes[p] = 0.5 * (1.0 + torch.cos(az - rad))
            facing_vecs[p] = torch.tensor([torch.cos(rad), torch.sin(rad)])
        self.register_buffer("band_rows", band_rows)  # bands x F
        self.register_buffer("ear_rows", ear_rows)  # pairs x 8
        self.register_buffer("lobes", lobes)  # pairs x W
        self.register_buffer("facing_vecs", facing_vecs)  # pairs x 2
        self.register_buffer("cos_az", torch.cos(az))
        self.register_buffer("sin_az", torch.sin(az))

    def forward(self, sp8):
        per_freq = sp8.mean(dim=3)  # B x 8 x F
        band_energy = torch.einsum("bcf,kf->bkc", per_freq, self.band_rows)  # B x bands x 8
        pair_energy = band_energy @ self.ear_rows.T  # B x bands x pairs
        profile = pair_energy @ self.lobes  # B x bands x W
        profile = profile / (profile.mean(dim=2, keepdim=True) + 1e-8)
        # First-harmonic direction estimate per band: four orthogonal cosine
        # lobes leave exactly one harmonic, so the energy-weighted direction
        # vector points at the (band's) dominant emitter.
        vec = pair_energy @ self.facing_vecs  # B x bands x 2 (x, y)
        norm = vec.norm(dim=2, keepdim=True).clamp(min=1e-8)
        cos_hat, sin_hat = (vec / norm)[..., 0], (vec / norm)[..., 1]
        cos_diff = cos_hat[..., None] * self.cos_az + sin_hat[..., None] * self.sin_az
        bump = torch.exp(self.kappa * (cos_diff - 1.0))  # B x bands x W
        energy = torch.log1p(pair_energy.sum(dim=2, keepdim=True)).expand_as(bump)
        h, w = self.grid_hw
        out = torch.cat([profile, bump, energy], dim=1)  # B x 3*bands x W
        return out[:, :, None, :].expand(-1, -1, h, -1)


class BinauralSteering(nn.Module):
    """Two-ear band-energy fan around the selected pair's facing direction.

    The facing angle comes from the same head pose that selected the pair, so
    it adds no information the pipeline lacks; ears spread cosine lobes 45
    degrees left and right of the facing azimuth, per signature band.
    """

    def __init__(self, grid_hw, spec_shape, sample_rate, bands=STEERING_BANDS,
                 ear_spread_deg: float = 45.0, sharpen: float = 4.0):
        super().__init__()
        self.grid_hw = tuple(grid_hw)
        self.out_channels = 3 * len(bands)
        self.ear_spread_deg = ear_spread_deg
        self.sharpen = sharpen
        h, w = self.grid_hw
        n_freqs = spec_shape[0]
        bin_hz = sample_rate / (2 * (n_freqs - 1))
        freqs = torch.arange(n_freqs, dtype=torch.float32) * bin_hz
        band_rows = torch.stack([((freqs >= lo) & (freqs <= hi)).float() for lo, hi in bands])
        band_rows = band_rows / band_rows.sum(dim=1, keepdim=True).clamp(min=1.0)
        az = torch.deg2rad((torch.arange(w, dtype=torch.float32) + 0.5) * (360.0 / w) - 180.0)
        self.register_buffer("band_rows", band_rows)
        self.register_buffer("cos_az", torch.cos(az))
        self.register_buffer("sin_az", torch.sin(az))

    def forward(self, isp, facing_deg):
        per_freq = isp.mean(dim=3)  # B x 2 x F
        band_energy = torch.einsum("bcf,kf->bkc", per_freq, self.band_rows)  # B x bands x 2
        centers = torch.stack([
            torch.deg2rad(facing_deg - self.ear_spread_deg),
            torch.deg2rad(facing_deg + self.ear_spread_deg),
        ], dim=1)  # B x 2
        # cos(az - c) expanded so the per-sample rotation stays vectorized
        cos_c, sin_c = torch.cos(centers), torch.sin(centers)
        cos_diff = cos_c[..., None] * self.cos_az + sin_c[..., None] * self.sin_az
        lobes = 0.5 * (1.0 + cos_diff)  # B x 2 x W
        profile = torch.einsum("bkc,bcw->bkw", band_energy, lobes)
        profile = profile / (profile.mean(dim=2, keepdim=True) + 1e-8)
        peaked = profile.pow(self.sharpen)
        peaked = peaked / (peaked.amax(dim=2, keepdim=True) + 1e-8)
        energy = torch.log1p(band_energy.sum(dim=2, keepdim=True)).expand_as(profile)
        h, w = self.grid_hw
        out = torch.cat([profile, peaked, energy], dim=1)
        return out[:, :, None, :].expand(-1, -1, h, -1)


class AudioTeacher(nn.Module):
    """8-channel spectrogram teacher emitting panorama-frame logits."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.grid_hw = stride16_hw(cfg.pano_hw)
        self.encoder = AudioEncoder(8, cfg.base_width, cfg.audio_channels, self.grid_hw)
        self.steering = SteeringMap(self.grid_hw, cfg.spec_shape, cfg.audio_sample_rate)
        self.decoder = Decoder(cfg.audio_channels + self.steering.out_channels,
                               cfg.decoder_width, coord_channels=cfg.coord_channels)
        self.seg_head = SegmentationHead(cfg.decoder_width, cfg.head_width, cfg.k_classes,
                                         cfg.pano_hw)

    def forward(self, sp8):
        _check_hw(sp8, self.cfg.spec_shape, "8-channel spectrogram")
        feat = self.encoder(sp8)
        grid = torch.cat([feat, self.steering(sp8)], dim=1)
        logits = self.seg_head(self.decoder(grid))
        return feat, logits

    def infer(self, sp8, gt=None):
        return self.forward(sp8)
