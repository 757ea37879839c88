"""
测试逐帧声学特征：分帧、F0、MFCC、SDC、归一化和上下文堆叠
"""

import librosa
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.config import FeatureConfig, FrameConfig, SdcConfig
from src.data_types import AudioBuffer, FeatureMatrix
from src.dsp_features import (
    NormStats,
    assemble_features,
    compute_mfcc,
    compute_sdc,
    estimate_f0,
    extract_base_features,
    frame_energy,
    frame_signal,
    mean_variance_normalize,
    normalize_features,
    select_columns,
    stack_context,
)
from src.errors import EmptyAudio, LayoutMismatch, RangeError, WindowEven

SR = 16000


def _tone(freq, seconds=1.0, amplitude=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), SR, f"tone{freq}")


# 分帧

def test_frame_grid():
    """帧中心 (512 + 256t)/16000：落在 [0.4, 0.6) 内的是第 23..35 帧"""
    grid = FrameConfig()
    centers = grid.frame_centers(60)
    inside = np.flatnonzero((centers >= 0.4) & (centers < 0.6))
    np.testing.assert_array_equal(inside, np.arange(23, 36))
    assert grid.n_frames(16000) == 59
    assert grid.n_frames(500) == 1, "不足一帧时补零成一帧"


def test_frame_signal():
    audio = AudioBuffer(np.arange(2048, dtype=np.float64), SR)
    frames = frame_signal(audio)
    assert frames.shape == (5, 1024)
    np.testing.assert_array_equal(frames[1], np.arange(256, 1280))

    short = frame_signal(AudioBuffer(np.ones(100), SR))
    assert short.shape == (1, 1024)
    assert short[0, :100].sum() == 100 and short[0, 100:].sum() == 0


def test_frame_signal_empty():
    with pytest.raises(EmptyAudio):
        frame_signal(AudioBuffer(np.zeros(0), SR))


def test_frame_energy():
    frames = np.vstack([np.full(1024, 0.5), np.zeros(1024)])
    np.testing.assert_allclose(frame_energy(frames), [0.5, 0.0])


# F0

@pytest.mark.parametrize("freq", [100.0, 220.0, 330.0])
def test_f0_pure_tones(freq):
    """纯音的 F0 在 ±5 Hz 内（至少 90% 的浊音帧）"""
    f0 = estimate_f0(_tone(freq))
    voiced = f0[f0 > 0]
    assert len(voiced) >= 0.9 * len(f0), "纯音应几乎全部判为浊音"
    assert np.mean(np.abs(voiced - freq) <= 5.0) >= 0.9, f"{freq} Hz 纯音的 F0 估计偏差过大"


def test_f0_silence_and_noise():
    silence = estimate_f0(AudioBuffer(np.zeros(SR), SR))
    assert np.all(silence == 0), "静音应全部为清音"
    rng = np.random.default_rng(0)
    noise = estimate_f0(AudioBuffer(0.3 * rng.normal(size=SR), SR))
    assert np.mean(noise == 0) >= 0.9, "白噪声应基本判为清音"


def test_f0_range():
    f0 = estimate_f0(_tone(180.0))
    voiced = f0[f0 > 0]
    assert np.all((voiced >= 60.0) & (voiced <= 400.0))


def test_f0_frame_too_short_for_any_period():
    """帧长 32 个采样点装不下 400 Hz 对应的 40 点周期，全部记为清音"""
    grid = FrameConfig(frame_len=32, hop=16)
    f0 = estimate_f0(_tone(220.0), grid)
    assert len(f0) == grid.n_frames(SR)
    assert np.all(f0 == 0)


def test_extract_rejects_other_sample_rate():
    """8 kHz 音频不能按 16 kHz 的网格分帧"""
    t = np.arange(8000) / 8000
    audio = AudioBuffer(0.5 * np.sin(2 * np.pi * 220.0 * t), 8000, "tone8k")
    with pytest.raises(RangeError):
        extract_base_features(audio, FeatureConfig())
    matrix = extract_base_features(audio, FeatureConfig(frame=FrameConfig(sample_rate=8000)))
    assert matrix.frame_times[-1] < 1.0


# MFCC / SDC

def _naive_mfcc(frames, n_mels=40, n_coeffs=13):
    """朴素 DFT + 显式 DCT-II 的参考实现"""
    n = frames.shape[1]
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    k = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n)[None, :] / n)
    magnitude = np.abs((frames * window) @ basis.T)
    fbank = librosa.filters.mel(sr=SR, n_fft=n, n_mels=n_mels, fmin=0.0, fmax=SR / 2)
    log_mel = np.log(np.maximum(magnitude @ fbank.T, 1e-10))
    m = np.arange(n_mels)
    coeffs = []
    for q in range(n_coeffs):
        scale = np.sqrt(1.0 / n_mels) if q == 0 else np.sqrt(2.0 / n_mels)
        coeffs.append(scale * log_mel @ np.cos(np.pi * q * (2 * m + 1) / (2 * n_mels)))
    return np.column_stack(coeffs)


def test_mfcc_matches_naive_reference():
    """10 段随机 1 秒信号上与朴素实现的最大绝对误差 < 1e-4"""
    rng = np.random.default_rng(1)
    for _ in range(10):
        frames = frame_signal(AudioBuffer(rng.uniform(-1, 1, SR), SR))
        diff = np.abs(compute_mfcc(frames) - _naive_mfcc(frames))
        assert diff.max() < 1e-4, f"MFCC 与参考实现的差异 {diff.max()} 过大"


def test_mfcc_shape():
    frames = frame_signal(_tone(220.0))
    assert compute_mfcc(frames).shape == (59, 13)


def test_sdc_constant_is_zero():
    sdc = compute_sdc(np.ones((30, 13)) * 3.7)
    assert sdc.shape == (30, 52), "SDC 应为 52 维"
    assert np.all(sdc == 0), "常数 MFCC 的 SDC 应恰好为 0"


def test_sdc_ramp():
    """线性增长的倒谱：内部帧每块差分为 2d，越界帧号被截断"""
    c = np.arange(20, dtype=np.float64)[:, None] * np.ones((1, 13))
    sdc = compute_sdc(c, SdcConfig(d=1, p=5, k=4))
    np.testing.assert_array_equal(sdc[5].reshape(4, 13)[:, 0], [2, 2, 2, 0])
    np.testing.assert_array_equal(sdc[0].reshape(4, 13)[:, 0], [1, 2, 2, 2])


# 归一化与堆叠

def test_mean_variance_normalize():
    rng = np.random.default_rng(2)
    values = np.column_stack([rng.normal(5, 3, 200), np.full(200, 7.0)])
    normalized, stats = mean_variance_normalize(values)
    np.testing.assert_allclose(normalized[:, 0].mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(normalized[:, 0].std(), 1.0, atol=1e-12)
    assert np.all(normalized[:, 1] == 0), "方差为零的列应输出全零"
    assert stats.std[1] == 0


def test_norm_stats_layout_and_dict():
    stats = NormStats(np.zeros(3), np.ones(3))
    with pytest.raises(LayoutMismatch):
        stats.apply(np.zeros((4, 2)))
    again = NormStats.from_dict(stats.to_dict())
    np.testing.assert_array_equal(again.mean, stats.mean)
    np.testing.assert_array_equal(again.std, stats.std)


def test_stack_context_edges():
    """边缘行复制"""
    values = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(stack_context(values, 3), [[1, 1, 2], [1, 2, 3], [2, 3, 3]])
    np.testing.assert_array_equal(stack_context(values, 1), values)


@pytest.mark.parametrize("window", [0, 2, 4, -1])
def test_stack_context_rejects_even(window):
    with pytest.raises(WindowEven):
        stack_context(np.zeros((3, 2)), window)


@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3)),
       st.sampled_from([1, 3, 5, 7]))
@settings(max_examples=50, deadline=None)
def test_stack_context_center_block(values, window):
    """堆叠后的中间块就是原矩阵"""
    stacked = stack_context(values, window)
    width = values.shape[1]
    half = (window - 1) // 2
    assert stacked.shape == (values.shape[0], width * window)
    np.testing.assert_array_equal(stacked[:, half * width:(half + 1) * width], values)


@pytest.mark.parametrize("feature_set, base", [("f0e", 2), ("full", 67)])
@pytest.mark.parametrize("window", [3, 5, 7])
def test_feature_widths(feature_set, base, window):
    """特征维数：F0+Energy 为 2w，全特征集为 67w"""
    matrix = assemble_features(_tone(200.0, seconds=0.3), FeatureConfig(), window, feature_set)
    assert matrix.width == base * window
    assert len(matrix.column_layout) == base * window
    if feature_set == "full" and window == 7:
        assert matrix.width == 469


def test_extract_base_features():
    config = FeatureConfig()
    matrix = extract_base_features(_tone(220.0), config)
    assert matrix.values.shape == (59, 67)
    assert matrix.values.dtype == np.float32
    assert matrix.column_layout == config.column_layout()
    assert matrix.config_digest == config.digest()
    np.testing.assert_allclose(matrix.frame_times, config.frame.frame_centers(59))
    assert np.median(matrix.values[:, 0]) == pytest.approx(220.0, abs=5.0)


def test_select_columns_matches_direct_extraction():
    """从全特征中选出 f0e 列，与直接按 f0e 提取结果一致"""
    audio = _tone(150.0, seconds=0.5)
    full_config = FeatureConfig()
    full = extract_base_features(audio, full_config)
    subset = select_columns(full, "f0e", full_config)
    direct = extract_base_features(audio, FeatureConfig(feature_set="f0e"))
    np.testing.assert_array_equal(subset.values, direct.values)
    assert subset.column_layout == direct.column_layout
    assert subset.config_digest == direct.config_digest


def test_select_columns_missing():
    f0e = FeatureMatrix(np.zeros((3, 2)), ["f0", "energy"], np.zeros(3))
    with pytest.raises(LayoutMismatch):
        select_columns(f0e, "full")


def test_normalize_features_with_stored_stats():
    matrix = FeatureMatrix(np.array([[1.0, 10.0], [3.0, 10.0]]), ["f0", "energy"], np.zeros(2))
    normalized, stats = normalize_features(matrix)
    np.testing.assert_allclose(normalized.values, [[-1, 0], [1, 0]])
    again, same = normalize_features(matrix, stats)
    assert same is stats
    np.testing.assert_array_equal(again.values, normalized.values)
