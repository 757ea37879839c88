"""
PDE（音高-时长-能量）修改器

只在推理时使用：把属于重音词的每个 token 的预测音高、能量乘以缩放因子，
时长乘以因子后取整，再按修改后的时长把逐 token 序列离散上采样到帧级。
"""

import logging

import matplotlib.pyplot as plt
import numpy as np

from src.config import VARIANCE_MODES
from src.data_types import ModifiedContours, StressCue, TargetCueSet
from src.errors import InvalidBounds, InvalidConfig, NegativeDuration, SchemaError, UnknownWordIndex

logger = logging.getLogger(__name__)


def clamp_scales(cues, bounds=(0.5, 2.0)):
    """
    每个缩放因子替换为 min(hi, max(lo, s))；幂等

    参数:
        cues: StressCue 列表或 TargetCueSet
        bounds: (lo, hi)，0 < lo <= hi

    返回:
        与输入同类型

    异常:
        InvalidBounds: 范围无效
    """
    lo, hi = bounds
    if not (0 < lo <= hi):
        raise InvalidBounds(f"缩放范围必须满足 0 < lo <= hi: {bounds}")

    def clamp(cue):
        return StressCue(cue.word_index, cue.word, *(min(hi, max(lo, s)) for s in cue.scales))

    if isinstance(cues, TargetCueSet):
        return TargetCueSet([clamp(c) for c in cues.cues], list(cues.unmapped_sources), dict(cues.provenance))
    return [clamp(c) for c in cues]


def round_durations(durations, scale=1.0):
    """四舍五入（远离零），原本非零的 token 至少保留 1 帧"""
    durations = np.asarray(durations, dtype=np.float64)
    scaled = np.floor(durations * scale + 0.5)
    scaled = np.where(durations > 0, np.maximum(scaled, 1.0), 0.0)
    return scaled.astype(np.int64)


def _resolve_variances(variances):
    if isinstance(variances, str):
        if variances not in VARIANCE_MODES:
            raise InvalidConfig(f"未知 variances 模式: {variances}")
        return set(VARIANCE_MODES[variances])
    return set(variances)


def apply_cues(contours, cues, variances="pde"):
    """
    按重音提示修改 token 级方差

    参数:
        contours: TokenContours
        cues: TargetCueSet 或 StressCue 列表（目标语言词下标）
        variances: 要修改的量，"p" / "pe" / "pde" 或集合 {"pitch","energy","duration"}

    返回:
        ModifiedContours：被提示的 token 满足 p_m = p̂·s_p，e_m = ê·s_e，
        d_m = round(d̂·s_d)；其余 token 音高能量不变，时长只做取整

    异常:
        UnknownWordIndex: 提示引用的词没有任何 token
    """
    cue_list = cues.cues if isinstance(cues, TargetCueSet) else list(cues)
    selected = _resolve_variances(variances)
    pitch = contours.pitch.copy()
    energy = contours.energy.copy()
    duration = round_durations(contours.duration)
    word_index = contours.token_word_index
    applied = []
    for cue in cue_list:
        tokens = np.flatnonzero(word_index == cue.word_index)
        if tokens.size == 0:
            raise UnknownWordIndex(f"提示引用的词 {cue.word_index} ({cue.word!r}) 没有对应的 token")
        if "pitch" in selected:
            pitch[tokens] = contours.pitch[tokens] * cue.pitch_scale
        if "energy" in selected:
            energy[tokens] = contours.energy[tokens] * cue.energy_scale
        if "duration" in selected:
            duration[tokens] = round_durations(contours.duration[tokens], cue.duration_scale)
        applied.append({
            "word_index": int(cue.word_index),
            "word": cue.word,
            "token_indices": [int(i) for i in tokens],
            "pitch_scale": float(cue.pitch_scale) if "pitch" in selected else 1.0,
            "energy_scale": float(cue.energy_scale) if "energy" in selected else 1.0,
            "duration_scale": float(cue.duration_scale) if "duration" in selected else 1.0,
        })
    logger.info("对 %d 个 token 应用了 %d 条提示", len(contours), len(applied))
    return ModifiedContours(list(contours.tokens), word_index.copy(), pitch, energy, duration, applied)


def upsample_by_duration(values, durations):
    """
    把第 i 个值重复 durations[i] 次，输出长度为 Σ durations

    异常:
        NegativeDuration: 时长为负
    """
    values = np.asarray(values)
    durations = np.asarray(durations)
    if len(values) != len(durations):
        raise SchemaError(f"值的个数 {len(values)} 与时长个数 {len(durations)} 不一致")
    if np.any(durations < 0):
        raise NegativeDuration("时长不能为负")
    if not np.all(np.floor(durations) == durations):
        raise SchemaError("上采样时长必须是整数")
    return np.repeat(values, durations.astype(np.int64))


def plot_contours(contours, modified):
    """
    绘制帧级的原始与修改后音高、能量轮廓

    返回:
        fig: matplotlib 图像对象
    """
    baseline_durations = round_durations(contours.duration)
    fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    for ax, name, before, after in (
        (axes[0], "pitch", contours.pitch, modified.pitch),
        (axes[1], "energy", contours.energy, modified.energy),
    ):
        ax.plot(upsample_by_duration(before, baseline_durations), label="baseline", lw=1)
        ax.plot(upsample_by_duration(after, modified.duration), label="stressed", lw=1)
        ax.set_ylabel(name)
        ax.grid(True, linestyle=":", alpha=0.6)
        ax.legend()
    axes[1].set_xlabel("frame")
    axes[0].set_title("PDE modifier: baseline vs stressed contours")
    return fig
