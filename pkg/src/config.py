"""
配置层：各阶段的参数数据类、YAML 配置文件读取和配置摘要

优先级：命令行参数 > 配置文件 > 默认值。
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
import yaml

from src.errors import InvalidConfig

logger = logging.getLogger(__name__)

FEATURE_SETS = ("f0e", "full")
MODEL_FAMILIES = ("svc", "rfc", "lpa")
VARIANCE_MODES = {"p": ("pitch",), "pe": ("pitch", "energy"), "pde": ("pitch", "energy", "duration")}


def _require(condition, message):
    if not condition:
        raise InvalidConfig(message)


@dataclass(frozen=True)
class FrameConfig:
    """分帧网格：帧长、帧移（采样点）和采样率"""
    frame_len: int = 1024
    hop: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        _require(self.sample_rate > 0, f"采样率必须为正数: {self.sample_rate}")
        _require(0 < self.hop <= self.frame_len, f"需要 0 < hop <= frame_len，当前 hop={self.hop}, frame_len={self.frame_len}")

    def n_frames(self, n_samples):
        """给定采样点数时的帧数；不足一帧时补零成一帧"""
        if n_samples < self.frame_len:
            return 1
        return 1 + (n_samples - self.frame_len) // self.hop

    def frame_centers(self, n_frames):
        """第 t 帧中心时刻 (frame_len/2 + hop*t) / sample_rate，单位秒"""
        t = np.arange(n_frames, dtype=np.float64)
        return (self.frame_len / 2.0 + self.hop * t) / self.sample_rate


@dataclass(frozen=True)
class PitchConfig:
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.3

    def __post_init__(self):
        _require(0 < self.f0_min < self.f0_max, f"需要 0 < f0_min < f0_max: {self.f0_min}, {self.f0_max}")
        _require(0 < self.voicing_threshold < 1, f"浊音阈值必须在 (0,1) 内: {self.voicing_threshold}")


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 13
    n_mels: int = 40
    fmin: float = 0.0
    fmax: Optional[float] = None  # None 表示 sample_rate/2

    def __post_init__(self):
        _require(1 <= self.n_coeffs <= self.n_mels, f"需要 1 <= n_coeffs <= n_mels: {self.n_coeffs}, {self.n_mels}")
        _require(self.fmin >= 0, f"fmin 不能为负: {self.fmin}")


@dataclass(frozen=True)
class SdcConfig:
    d: int = 1
    p: int = 5
    # 输出维数 = 13 x k，默认 k=4 得到 52 维
    k: int = 4
    n_base: int = 13

    def __post_init__(self):
        _require(self.d >= 1 and self.p >= 1 and self.k >= 1 and self.n_base >= 1,
                 f"SDC 参数必须 >= 1: d={self.d}, p={self.p}, k={self.k}, n_base={self.n_base}")

    @property
    def width(self):
        return self.n_base * self.k


@dataclass(frozen=True)
class FeatureConfig:
    """决定特征文件内容的全部参数，其摘要写入特征文件头"""
    frame: FrameConfig = field(default_factory=FrameConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    sdc: SdcConfig = field(default_factory=SdcConfig)
    feature_set: str = "full"

    def __post_init__(self):
        _require(self.feature_set in FEATURE_SETS, f"未知特征集: {self.feature_set}")
        nyquist = self.frame.sample_rate / 2.0
        _require(self.pitch.f0_max < nyquist, f"f0_max 必须小于奈奎斯特频率 {nyquist}")
        _require(self.mfcc.fmax is None or self.mfcc.fmax <= nyquist, f"fmax 不能超过 {nyquist}")
        _require(self.sdc.n_base <= self.mfcc.n_coeffs, "SDC 的 n_base 不能超过 MFCC 维数")

    def column_layout(self, feature_set=None):
        feature_set = feature_set or self.feature_set
        columns = ["f0", "energy"]
        if feature_set == "full":
            columns += [f"mfcc_{i}" for i in range(self.mfcc.n_coeffs)]
            columns += [f"sdc_{i}" for i in range(self.sdc.width)]
        return columns

    def digest(self):
        """对规范化 JSON 求 SHA-256，返回 64 位十六进制串（文件中存 32 字节）"""
        return sha256_of(dataclasses.asdict(self))


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        _require(self.k_neighbors >= 1, f"k_neighbors 必须 >= 1: {self.k_neighbors}")
        _require(0 < self.target_ratio <= 1, f"target_ratio 必须在 (0,1] 内: {self.target_ratio}")


@dataclass(frozen=True)
class SvcConfig:
    penalty_c: float = 0.8
    gamma: Union[str, float] = "scale"
    tol: float = 1e-3

    def __post_init__(self):
        _require(self.penalty_c > 0 and self.tol > 0, "SVC 的 C 和 tol 必须为正数")
        _require(self.gamma == "scale" or float(self.gamma) > 0, f"gamma 必须为 'scale' 或正数: {self.gamma}")


@dataclass(frozen=True)
class RfcConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        _require(self.n_trees >= 1, f"n_trees 必须 >= 1: {self.n_trees}")
        _require(self.max_depth is None or self.max_depth >= 1, f"max_depth 必须 >= 1: {self.max_depth}")


@dataclass(frozen=True)
class LpaConfig:
    kernel: str = "knn"
    n_neighbors: int = 7
    gamma: Union[str, float] = "scale"
    alpha: float = 0.2
    max_iter: int = 1000
    tol: float = 1e-3

    def __post_init__(self):
        _require(self.kernel in ("knn", "rbf"), f"未知 LPA 核: {self.kernel}")
        _require(self.n_neighbors >= 1 and self.max_iter >= 1 and self.tol > 0, "LPA 参数必须为正数")
        _require(0 <= self.alpha < 1, f"alpha 必须在 [0,1) 内: {self.alpha}")
        _require(self.gamma == "scale" or float(self.gamma) > 0, f"gamma 必须为 'scale' 或正数: {self.gamma}")


@dataclass(frozen=True)
class ModelConfig:
    family: str = "lpa"
    svc: SvcConfig = field(default_factory=SvcConfig)
    rfc: RfcConfig = field(default_factory=RfcConfig)
    lpa: LpaConfig = field(default_factory=LpaConfig)

    def __post_init__(self):
        _require(self.family in MODEL_FAMILIES, f"未知模型类型: {self.family}")


@dataclass(frozen=True)
class PipelineConfig:
    """一次运行的完整配置；rng_seed 是唯一的随机源"""
    frame: FrameConfig = field(default_factory=FrameConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    sdc: SdcConfig = field(default_factory=SdcConfig)
    feature_set: str = "full"
    window: int = 7
    model: ModelConfig = field(default_factory=ModelConfig)
    smote: SmoteConfig = field(default_factory=SmoteConfig)
    clamp: Tuple[float, float] = (0.5, 2.0)
    duration_scale: float = 1.0
    variances: str = "pde"
    rng_seed: int = 0
    jobs: int = -1
    min_annotators: int = 3
    min_kappa: Optional[float] = None
    test_fraction: float = 0.2
    eval_feature_sets: Tuple[str, ...] = FEATURE_SETS
    eval_windows: Tuple[int, ...] = (3, 5, 7)
    eval_models: Tuple[str, ...] = ("lpa", "rfc", "svc")

    def __post_init__(self):
        _require(self.window >= 1 and self.window % 2 == 1, f"窗口必须为正奇数: {self.window}")
        lo, hi = self.clamp
        _require(0 < lo <= hi, f"缩放范围必须满足 0 < lo <= hi: {self.clamp}")
        _require(self.duration_scale > 0, f"duration_scale 必须为正数: {self.duration_scale}")
        _require(self.variances in VARIANCE_MODES, f"未知 variances 模式: {self.variances}")
        _require(self.min_annotators >= 1, "min_annotators 必须 >= 1")
        _require(0 < self.test_fraction < 1, f"test_fraction 必须在 (0,1) 内: {self.test_fraction}")
        _require(all(w >= 1 and w % 2 == 1 for w in self.eval_windows), f"评测窗口必须为正奇数: {self.eval_windows}")
        _require(all(f in FEATURE_SETS for f in self.eval_feature_sets), f"未知评测特征集: {self.eval_feature_sets}")
        _require(all(m in MODEL_FAMILIES for m in self.eval_models), f"未知评测模型: {self.eval_models}")
        # 随机种子统一下发
        object.__setattr__(self, "clamp", (float(lo), float(hi)))
        object.__setattr__(self, "smote", dataclasses.replace(self.smote, rng_seed=self.rng_seed))
        object.__setattr__(self, "model", dataclasses.replace(
            self.model, rfc=dataclasses.replace(self.model.rfc, rng_seed=self.rng_seed)))
        FeatureConfig(self.frame, self.pitch, self.mfcc, self.sdc, self.feature_set)

    @property
    def feature_config(self):
        return FeatureConfig(self.frame, self.pitch, self.mfcc, self.sdc, self.feature_set)

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_overrides(self, **overrides):
        """用非 None 的覆盖值生成新配置（命令行参数层）"""
        values = {k: v for k, v in overrides.items() if v is not None}
        if "family" in values:
            values["model"] = dataclasses.replace(self.model, family=values.pop("family"))
        return dataclasses.replace(self, **values)


_NESTED = {
    PipelineConfig: {"frame": FrameConfig, "pitch": PitchConfig, "mfcc": MfccConfig, "sdc": SdcConfig,
                     "model": ModelConfig, "smote": SmoteConfig},
    ModelConfig: {"svc": SvcConfig, "rfc": RfcConfig, "lpa": LpaConfig},
}
_TUPLES = {"clamp", "eval_feature_sets", "eval_windows", "eval_models"}


def _build(cls, mapping, where):
    if not isinstance(mapping, dict):
        raise InvalidConfig(f"{where} 必须是映射")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - known
    if unknown:
        raise InvalidConfig(f"{where} 中有未知配置项: {sorted(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        nested = _NESTED.get(cls, {}).get(key)
        if nested is not None:
            kwargs[key] = _build(nested, value, f"{where}.{key}")
        elif key in _TUPLES:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidConfig(f"{where}: {exc}") from None


def config_from_dict(mapping):
    return _build(PipelineConfig, mapping or {}, "config")


def load_config(path=None):
    """
    读取 YAML 配置文件

    参数:
        path: 配置文件路径；None 时返回默认配置

    返回:
        PipelineConfig

    异常:
        FileNotFoundError: 文件不存在
        InvalidConfig: 内容不是合法配置
    """
    if path is None:
        return PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            mapping = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"配置文件 {path} 解析失败: {exc}") from None
    logger.info("已读取配置 %s", path)
    return config_from_dict(mapping)


def sha256_of(obj):
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def layout_digest(column_layout, feature_digest=""):
    """模型输入布局摘要：特征配置摘要 + 列名（堆叠后的列名已包含窗口信息）"""
    return sha256_of({"columns": list(column_layout), "features": feature_digest})
