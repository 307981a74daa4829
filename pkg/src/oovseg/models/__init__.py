from .checkpoint import (CheckpointError, load_checkpoint, load_manifest, load_student,
                         save_checkpoint)
from .fusion import AudioVisualFusion, FusionAttention
from .nets import (ENCODER_STRIDE, AudioEncoder, AudioReconstructionHead, AudioTeacher,
                   Decoder, ImageReconstructionHead, SegmentationHead, Student,
                   TeacherProjector, VisualEncoder, VisualTeacher, stride16_hw)
from .oracle import OracleAudioTeacher, OracleVisualTeacher

__all__ = [
    "AudioEncoder", "AudioReconstructionHead", "AudioTeacher", "AudioVisualFusion",
    "CheckpointError", "Decoder", "ENCODER_STRIDE", "FusionAttention",
    "ImageReconstructionHead", "OracleAudioTeacher", "OracleVisualTeacher",
    "SegmentationHead", "Student", "TeacherProjector", "VisualEncoder", "VisualTeacher",
    "load_checkpoint", "load_manifest", "load_student", "save_checkpoint", "stride16_hw",
]
