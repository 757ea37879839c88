"""
帧级预测 → 词级重音判定，以及每个重音词的音高/能量缩放因子

一个词的帧是中心落在 [start_s, end_s) 内的帧；严格多数（> 0.5）帧
预测为重音时该词判为重音，五五开时判为非重音。
"""

import logging
from typing import NamedTuple

import numpy as np

from src.config import FrameConfig
from src.data_types import StressCue, WordStressDecision
from src.errors import EmptyInput, EmptyRange, GridMismatch, WordListMismatch

logger = logging.getLogger(__name__)

DEFAULT_CLAMP = (0.5, 2.0)


class ScaleFactors(NamedTuple):
    pitch_scale: float
    energy_scale: float
    duration_scale: float


def frames_for_word(word, grid=None, n_frames=0):
    """
    参数:
        word: 带 start_s / end_s 的词
        grid: FrameConfig
        n_frames: 帧数

    返回:
        range：中心落在 [start_s, end_s) 内的帧号；很短的词可能为空
    """
    grid = grid or FrameConfig()
    centers = grid.frame_centers(n_frames)
    lo = int(np.searchsorted(centers, word.start_s, side="left"))
    hi = int(np.searchsorted(centers, word.end_s, side="left"))
    return range(lo, max(lo, hi))


def word_level_stress(frame_preds, words, grid=None):
    """
    帧级预测转词级判定

    参数:
        frame_preds: FrameLabels（预测）
        words: WordAlignment
        grid: 期望的分帧网格，给出时必须与 frame_preds.grid 相同

    返回:
        WordStressDecision 列表，与 words 一一对应

    异常:
        GridMismatch: 网格不一致，或词的结束时刻超出预测所覆盖的音频
    """
    if grid is not None and grid != frame_preds.grid:
        raise GridMismatch(f"预测的分帧网格 {frame_preds.grid} 与期望网格 {grid} 不一致")
    grid = frame_preds.grid
    # n 帧最多对应 frame_len + hop*n 个采样点的音频
    extent = (grid.frame_len + grid.hop * frame_preds.n_frames) / grid.sample_rate
    late = [w for w in words.words if w.end_s > extent]
    if late:
        raise GridMismatch(f"词 {late[0].text!r} 结束于 {late[0].end_s:.3f} s，"
                           f"超出 {frame_preds.n_frames} 帧预测覆盖的 {extent:.3f} s")
    labels = frame_preds.labels
    decisions = []
    for index, word in enumerate(words.words):
        frames = frames_for_word(word, frame_preds.grid, frame_preds.n_frames)
        if len(frames) == 0:
            fraction = 0.0
        else:
            fraction = float(labels[frames.start:frames.stop].sum()) / len(frames)
        decisions.append(WordStressDecision(index, word.text, fraction > 0.5, fraction))
    return decisions


def _mean_ratio(inside, outside):
    if inside.size == 0 or outside.size == 0:
        return 1.0
    denominator = outside.mean()
    if denominator == 0:
        return 1.0
    return float(inside.mean() / denominator)


def compute_scaling_factors(pitch, energy, frame_range, clamp=DEFAULT_CLAMP, duration_scale=1.0):
    """
    重音词相对句子其余部分的缩放因子

    参数:
        pitch: 逐帧 F0 (Hz)，0 表示清音
        energy: 逐帧能量
        frame_range: 词所占的帧号范围
        clamp: (lo, hi) 缩放范围
        duration_scale: 配置给定的时长因子

    返回:
        ScaleFactors：音高只统计浊音帧，能量统计所有帧，
        分母集合为空或为零时因子取 1.0

    异常:
        EmptyRange: 词没有帧
    """
    if len(frame_range) == 0:
        raise EmptyRange("词所占帧范围为空，无法计算缩放因子")
    pitch = np.asarray(pitch, dtype=np.float64)
    energy = np.asarray(energy, dtype=np.float64)
    inside = np.zeros(len(pitch), dtype=bool)
    inside[frame_range.start:frame_range.stop] = True
    voiced = pitch > 0
    raw = (
        _mean_ratio(pitch[inside & voiced], pitch[~inside & voiced]),
        _mean_ratio(energy[inside], energy[~inside]),
        float(duration_scale),
    )
    lo, hi = clamp
    return ScaleFactors(*(min(hi, max(lo, s)) for s in raw))


def build_stress_cues(decisions, pitch, energy, words, grid=None, clamp=DEFAULT_CLAMP, duration_scale=1.0):
    """对判为重音且有帧的词生成 StressCue"""
    grid = grid or FrameConfig()
    cues = []
    for decision in decisions:
        if not decision.stressed:
            continue
        frames = frames_for_word(words.words[decision.word_index], grid, len(pitch))
        if len(frames) == 0:
            continue
        scales = compute_scaling_factors(pitch, energy, frames, clamp, duration_scale)
        cues.append(StressCue(decision.word_index, decision.word, *scales))
    logger.debug("从 %d 个词中得到 %d 条重音提示", len(decisions), len(cues))
    return cues


def gold_word_decisions(gold_labels, words, grid=None):
    """金标逐帧标签按同样的多数规则转成词级金标"""
    return word_level_stress(gold_labels, words, grid)


def post_accuracy(predicted, gold):
    """
    词级准确率

    异常:
        WordListMismatch: 两组判定对应的词表不同
        EmptyInput: 没有词
    """
    if len(predicted) != len(gold):
        raise WordListMismatch(f"预测有 {len(predicted)} 个词，金标有 {len(gold)} 个词")
    if not predicted:
        raise EmptyInput("没有可评价的词")
    for p, g in zip(predicted, gold):
        if (p.word_index, p.word) != (g.word_index, g.word):
            raise WordListMismatch(f"词表不一致: {p.word_index}:{p.word!r} vs {g.word_index}:{g.word!r}")
    agree = sum(p.stressed == g.stressed for p, g in zip(predicted, gold))
    return agree / len(predicted)
