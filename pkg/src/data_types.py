"""
各阶段之间传递的领域数据类型

时间单位统一为秒，音频为 [-1, 1] 范围内的单声道浮点采样。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import FrameConfig, layout_digest
from src.errors import NonFinite, RangeError


@dataclass
class AudioBuffer:
    samples: np.ndarray  # float64, shape (n,)
    sample_rate: int
    audio_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise RangeError(f"采样率必须为正数: {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise NonFinite(f"音频 {self.audio_id!r} 含有非有限采样值")

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Word:
    text: str
    start_s: float
    end_s: float


@dataclass
class WordAlignment:
    """ASR 输出的词级时间戳"""
    words: List[Word]
    audio_id: str = ""

    def __len__(self):
        return len(self.words)


@dataclass
class MtAlignment:
    """源语言词与目标语言词之间的对齐链接，允许多对多"""
    source_words: List[str]
    target_words: List[str]
    links: frozenset  # {(source_index, target_index)}


@dataclass(frozen=True)
class StressRegion:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (np.isfinite(self.start_s) and np.isfinite(self.end_s)):
            raise RangeError(f"区间端点必须为有限值: [{self.start_s}, {self.end_s}]")
        if self.start_s < 0 or self.end_s <= self.start_s:
            raise RangeError(f"无效重音区间: [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self):
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Annotation:
    annotator_id: str
    regions: Tuple[StressRegion, ...] = ()


@dataclass
class AnnotationSet:
    audio_id: str
    duration_s: float
    annotations: List[Annotation]
    sample_rate: int = 16000
    speaker_id: Optional[str] = None

    @property
    def speaker(self):
        """未标注说话人时取 audio_id 中第一个 "_" 之前的部分"""
        if self.speaker_id:
            return self.speaker_id
        return self.audio_id.split("_", 1)[0]

    @property
    def n_samples(self):
        return int(round(self.duration_s * self.sample_rate))


@dataclass
class FrameLabels:
    labels: np.ndarray  # int8, 1 = 重音帧
    grid: FrameConfig = field(default_factory=FrameConfig)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)

    def __len__(self):
        return len(self.labels)

    @property
    def n_frames(self):
        return len(self.labels)

    def frame_centers(self):
        return self.grid.frame_centers(self.n_frames)


@dataclass
class GoldLabels:
    """一份金标文档：聚合后的逐帧标签、金标区间、kappa 和说话人"""
    audio_id: str
    frame_labels: FrameLabels
    gold_regions: List[StressRegion]
    kappa: float
    speaker_id: Optional[str] = None

    @property
    def speaker(self):
        if self.speaker_id:
            return self.speaker_id
        return self.audio_id.split("_", 1)[0]


@dataclass
class FeatureMatrix:
    """逐帧特征矩阵，行是帧，列名见 column_layout"""
    values: np.ndarray  # float32, shape (rows, cols)
    column_layout: List[str]
    frame_times: np.ndarray
    config_digest: str = ""

    def __post_init__(self):
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        self.column_layout = list(self.column_layout)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            self.values = self.values.reshape(len(self.frame_times), len(self.column_layout))
        if self.values.shape[1] != len(self.column_layout):
            raise RangeError(f"列名数 {len(self.column_layout)} 与矩阵宽度 {self.values.shape[1]} 不一致")
        if self.values.shape[0] != len(self.frame_times):
            raise RangeError(f"帧时刻数 {len(self.frame_times)} 与行数 {self.values.shape[0]} 不一致")

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def layout_digest(self):
        return layout_digest(self.column_layout, self.config_digest)


@dataclass(frozen=True)
class WordStressDecision:
    word_index: int
    word: str
    stressed: bool
    stressed_frame_fraction: float


@dataclass(frozen=True)
class StressCue:
    """一个重音词及其音高/能量/时长缩放因子，是检测、对齐和 PDE 修改器之间的传递单位"""
    word_index: int
    word: str
    pitch_scale: float = 1.0
    energy_scale: float = 1.0
    duration_scale: float = 1.0

    @property
    def scales(self):
        return (self.pitch_scale, self.energy_scale, self.duration_scale)


@dataclass
class TargetCueSet:
    cues: List[StressCue]
    unmapped_sources: List[int] = field(default_factory=list)
    provenance: Dict[int, List[int]] = field(default_factory=dict)  # 目标词 -> 源词


@dataclass
class TokenContours:
    """TTS 方差预测器输出：每个字符 token 的音高、能量和时长（帧）"""
    tokens: List[str]
    token_word_index: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    duration: np.ndarray

    def __post_init__(self):
        self.tokens = list(self.tokens)
        self.token_word_index = np.asarray(self.token_word_index, dtype=np.int64).reshape(-1)
        self.pitch = np.asarray(self.pitch, dtype=np.float64).reshape(-1)
        self.energy = np.asarray(self.energy, dtype=np.float64).reshape(-1)
        self.duration = np.asarray(self.duration, dtype=np.float64).reshape(-1)

    def __len__(self):
        return len(self.tokens)


@dataclass
class ModifiedContours:
    tokens: List[str]
    token_word_index: np.ndarray
    pitch: np.ndarray
    energy: np.ndarray
    duration: np.ndarray  # int64，修改后的整数帧数 d_m
    applied_cues: List[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.tokens)
