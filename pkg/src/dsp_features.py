"""
逐帧声学特征：能量、F0、MFCC、SDC、均值方差归一化和上下文堆叠

所有特征共用同一个分帧网格（默认帧长 1024、帧移 256、16 kHz），
每一行对应一帧。所有函数都是纯函数，不修改输入。
"""

import dataclasses
import functools
import logging
from dataclasses import dataclass

import librosa
import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import get_window

from src.config import FeatureConfig, FrameConfig, MfccConfig, PitchConfig, SdcConfig
from src.data_types import FeatureMatrix
from src.errors import EmptyAudio, LayoutMismatch, RangeError, WindowEven

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
# 低于该 RMS 的帧直接判为清音
SILENCE_RMS = 1e-6
# 候选基音峰只需达到最大相关值的这一比例，取其中最短的周期，避免倍周期错误
PEAK_RATIO = 0.9


def frame_signal(audio, cfg=None):
    """
    把音频切成帧矩阵（不加窗）

    参数:
        audio: AudioBuffer
        cfg: FrameConfig

    返回:
        frames: 形状 (n_frames, frame_len) 的数组；音频短于一帧时返回一帧并在末尾补零
    """
    cfg = cfg or FrameConfig()
    x = audio.samples
    if x.size == 0:
        raise EmptyAudio(f"音频 {audio.audio_id!r} 没有采样点")
    if x.size < cfg.frame_len:
        frame = np.zeros((1, cfg.frame_len))
        frame[0, :x.size] = x
        return frame
    windows = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)[::cfg.hop]
    return np.ascontiguousarray(windows[:cfg.n_frames(x.size)], dtype=np.float64)


def frame_energy(frames):
    """每帧的均方根能量"""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    return np.sqrt(np.mean(frames ** 2, axis=1))


def _nccf(frames, lags):
    """归一化互相关 r(L) = Σ x[n]x[n+L] / sqrt(Σx[n]² Σx[n+L]²)，形状 (n_frames, len(lags))"""
    n = frames.shape[1]
    squares = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    r = np.zeros((frames.shape[0], len(lags)))
    for j, lag in enumerate(lags):
        num = np.einsum("ij,ij->i", frames[:, :n - lag], frames[:, lag:])
        head = squares[:, n - lag]
        tail = squares[:, n] - squares[:, lag]
        den = np.sqrt(head * tail)
        np.divide(num, den, out=r[:, j], where=den > 0)
    return r


def estimate_f0(audio, frame_cfg=None, pitch_cfg=None):
    """
    基于归一化自相关的逐帧 F0 估计

    参数:
        audio: AudioBuffer
        frame_cfg: FrameConfig
        pitch_cfg: PitchConfig

    返回:
        f0: 每帧基频 (Hz)，清音帧为 0.0，浊音帧落在 [f0_min, f0_max] 内
    """
    frame_cfg = frame_cfg or FrameConfig()
    pitch_cfg = pitch_cfg or PitchConfig()
    frames = frame_signal(audio, frame_cfg)
    frames = frames - frames.mean(axis=1, keepdims=True)
    sr = audio.sample_rate
    n = frames.shape[1]

    lag_min = max(2, int(np.floor(sr / pitch_cfg.f0_max)))
    lag_max = min(n - 2, int(np.ceil(sr / pitch_cfg.f0_min)))
    f0 = np.zeros(frames.shape[0])
    if lag_max < lag_min:
        # 帧太短，容纳不下任何候选周期
        return f0
    lags = np.arange(lag_min - 1, lag_max + 2)
    r = _nccf(frames, lags)
    inner = r[:, 1:-1]

    rms = frame_energy(frames)
    peak = inner.max(axis=1)
    voiced = (peak >= pitch_cfg.voicing_threshold) & (rms >= SILENCE_RMS)
    local_max = (inner >= r[:, :-2]) & (inner >= r[:, 2:])
    for t in np.flatnonzero(voiced):
        candidates = np.flatnonzero(local_max[t] & (inner[t] >= PEAK_RATIO * peak[t]))
        if candidates.size == 0:
            continue
        j = candidates[0] + 1  # r 中的列号
        left, centre, right = r[t, j - 1], r[t, j], r[t, j + 1]
        curvature = left - 2 * centre + right
        delta = 0.5 * (left - right) / curvature if curvature < 0 else 0.0
        period = lags[j] + float(np.clip(delta, -0.5, 0.5))
        f0[t] = np.clip(sr / period, pitch_cfg.f0_min, pitch_cfg.f0_max)
    logger.debug("%s 的 F0 估计：%d/%d 帧浊音", audio.audio_id, np.count_nonzero(f0), len(f0))
    return f0


@functools.lru_cache(maxsize=16)
def mel_filterbank(sample_rate, n_fft, n_mels, fmin, fmax):
    """librosa 的 Slaney 梅尔滤波器组，形状 (n_mels, n_fft//2 + 1)"""
    return librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=fmin, fmax=fmax)


def compute_mfcc(frames, frame_cfg=None, mfcc_cfg=None):
    """
    Hann 窗 → 幅度谱 → 梅尔滤波器组 → 取对数 → DCT-II（正交归一），保留前 n_coeffs 维

    参数:
        frames: 帧矩阵
        frame_cfg: FrameConfig
        mfcc_cfg: MfccConfig

    返回:
        形状 (n_frames, n_coeffs) 的 MFCC 矩阵
    """
    frame_cfg = frame_cfg or FrameConfig()
    mfcc_cfg = mfcc_cfg or MfccConfig()
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    window = get_window("hann", frame_cfg.frame_len, fftbins=True)
    magnitude = np.abs(rfft(frames * window, n=frame_cfg.frame_len, axis=1))
    fmax = mfcc_cfg.fmax if mfcc_cfg.fmax is not None else frame_cfg.sample_rate / 2.0
    fbank = mel_filterbank(frame_cfg.sample_rate, frame_cfg.frame_len, mfcc_cfg.n_mels, float(mfcc_cfg.fmin), float(fmax))
    log_mel = np.log(np.maximum(magnitude @ fbank.T, LOG_FLOOR))
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, :mfcc_cfg.n_coeffs]


def compute_sdc(mfcc, sdc_cfg=None):
    """
    移位差分倒谱 (SDC)

    第 t 帧的第 i 块 = c(t + i·p + d) − c(t + i·p − d)，i = 0..k−1，
    越界帧号截断到有效范围。输出宽度 n_base × k。
    """
    sdc_cfg = sdc_cfg or SdcConfig()
    c = np.atleast_2d(np.asarray(mfcc, dtype=np.float64))[:, :sdc_cfg.n_base]
    n = c.shape[0]
    t = np.arange(n)
    blocks = []
    for i in range(sdc_cfg.k):
        plus = np.clip(t + i * sdc_cfg.p + sdc_cfg.d, 0, n - 1)
        minus = np.clip(t + i * sdc_cfg.p - sdc_cfg.d, 0, n - 1)
        blocks.append(c[plus] - c[minus])
    return np.hstack(blocks)


@dataclass
class NormStats:
    """按列的均值和总体标准差，推理时复用训练集统计量"""
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[1] != len(self.mean):
            raise LayoutMismatch(f"归一化统计量有 {len(self.mean)} 列，输入有 {values.shape[1]} 列")
        out = np.zeros_like(values)
        live = self.std > 0
        out[:, live] = (values[:, live] - self.mean[live]) / self.std[live]
        return out

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["mean"], dtype=np.float64), np.asarray(doc["std"], dtype=np.float64))


def mean_variance_normalize(matrix):
    """
    按列做均值方差归一化（总体标准差）

    返回:
        (归一化后的矩阵, NormStats)；方差为零的列输出全零
    """
    values = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    mean = values.mean(axis=0) if values.shape[0] else np.zeros(values.shape[1])
    std = values.std(axis=0) if values.shape[0] else np.zeros(values.shape[1])
    std = np.where(std > 1e-12, std, 0.0)
    stats = NormStats(mean, std)
    return stats.apply(values), stats


def stack_context(matrix, window):
    """
    上下文堆叠：第 t 行拼接 t−(w−1)/2 .. t+(w−1)/2 行，边缘行复制

    参数:
        matrix: 二维数组或 FeatureMatrix
        window: 正奇数

    返回:
        与输入同类型，行数不变，宽度乘以 window

    异常:
        WindowEven: window 不是正奇数
    """
    if window < 1 or window % 2 == 0:
        raise WindowEven(f"上下文窗口必须为正奇数: {window}")
    if isinstance(matrix, FeatureMatrix):
        half = (window - 1) // 2
        layout = [f"{name}@{offset:+d}" if window > 1 else name
                  for offset in range(-half, half + 1) for name in matrix.column_layout]
        stacked = stack_context(matrix.values, window)
        return FeatureMatrix(stacked, layout, matrix.frame_times, matrix.config_digest)

    values = np.atleast_2d(np.asarray(matrix))
    if window == 1:
        return values.copy()
    n, width = values.shape
    if n == 0:
        return np.zeros((0, width * window), dtype=values.dtype)
    half = (window - 1) // 2
    padded = np.pad(values, ((half, half), (0, 0)), mode="edge")
    return np.hstack([padded[j:j + n] for j in range(window)])


def extract_base_features(audio, config=None):
    """
    计算未归一化、未堆叠的逐帧特征

    参数:
        audio: AudioBuffer
        config: FeatureConfig；feature_set 为 "f0e" 时两列 [F0, Energy]，
                "full" 时 [F0, Energy, MFCC×13, SDC×52]

    返回:
        FeatureMatrix
    """
    config = config or FeatureConfig()
    if audio.sample_rate != config.frame.sample_rate:
        raise RangeError(f"{audio.audio_id}: 采样率 {audio.sample_rate} Hz "
                         f"与分帧配置的 {config.frame.sample_rate} Hz 不一致")
    frames = frame_signal(audio, config.frame)
    columns = [estimate_f0(audio, config.frame, config.pitch), frame_energy(frames)]
    values = np.column_stack(columns)
    if config.feature_set == "full":
        mfcc = compute_mfcc(frames, config.frame, config.mfcc)
        values = np.hstack([values, mfcc, compute_sdc(mfcc, config.sdc)])
    return FeatureMatrix(values, config.column_layout(), config.frame.frame_centers(frames.shape[0]), config.digest())


def normalize_features(matrix, stats=None):
    """对 FeatureMatrix 做 MVN；stats 为 None 时用本矩阵自身的统计量"""
    if stats is None:
        values, stats = mean_variance_normalize(matrix.values)
    else:
        values = stats.apply(matrix.values)
    return FeatureMatrix(values, matrix.column_layout, matrix.frame_times, matrix.config_digest), stats


def select_columns(matrix, feature_set, config=None):
    """
    从全特征矩阵中取出某个特征集的列（f0e 是 full 的前缀）

    config 必须是产生该矩阵的 FeatureConfig；结果的摘要与直接按该特征集提取时一致。
    """
    config = config or FeatureConfig()
    subset = dataclasses.replace(config, feature_set=feature_set)
    wanted = subset.column_layout()
    index = {name: i for i, name in enumerate(matrix.column_layout)}
    missing = [name for name in wanted if name not in index]
    if missing:
        raise LayoutMismatch(f"特征矩阵缺少列 {missing[:3]}")
    cols = [index[name] for name in wanted]
    return FeatureMatrix(matrix.values[:, cols], wanted, matrix.frame_times, subset.digest())


def assemble_features(audio, config=None, window=1, feature_set=None, norm_stats=None):
    """
    特征装配：提取 → MVN → 上下文堆叠

    参数:
        audio: AudioBuffer
        config: FeatureConfig
        window: 上下文窗口（正奇数）
        feature_set: 覆盖 config.feature_set
        norm_stats: 已存的训练集统计量；None 时按本句话归一化

    返回:
        FeatureMatrix，宽度 = 基础维数 × window
    """
    config = config or FeatureConfig()
    if feature_set is not None and feature_set != config.feature_set:
        config = FeatureConfig(config.frame, config.pitch, config.mfcc, config.sdc, feature_set)
    base = extract_base_features(audio, config)
    normalized, _ = normalize_features(base, norm_stats)
    return stack_context(normalized, window)
