"""
多标注者重音区间的聚合与 Fleiss kappa 一致性

金标规则：某帧中心被严格多数（> n/2）标注者的区间覆盖时记为重音帧；
kappa 只作为质量指标报告，不参与投票。
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from statsmodels.stats.inter_rater import fleiss_kappa as statsmodels_fleiss_kappa

from src.config import FrameConfig
from src.data_types import FrameLabels, StressRegion
from src.errors import (
    DegenerateAgreement,
    EmptyInput,
    KappaBelowThreshold,
    TooFewAnnotators,
    UnequalRaterCounts,
)

logger = logging.getLogger(__name__)


def fleiss_kappa(counts):
    """
    Fleiss kappa

    参数:
        counts: 形状 (条目数, 类别数) 的评分计数矩阵，每行之和为评分人数 n

    返回:
        kappa = (P̄ − P̄e) / (1 − P̄e)；所有条目意见一致时恰好返回 1.0

    异常:
        UnequalRaterCounts: 各行评分人数不同或 n < 2
        DegenerateAgreement: 全部评分落在同一类别，P̄e = 1
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 2 or counts.shape[0] == 0:
        raise EmptyInput("计数矩阵不能为空")
    if counts.shape[1] < 2:
        raise DegenerateAgreement("至少需要两个类别")
    raters = counts.sum(axis=1)
    n = int(raters[0])
    if np.any(raters != n) or n < 2:
        raise UnequalRaterCounts(f"每个条目的评分人数必须相同且 >= 2: {sorted(set(raters.tolist()))}")

    p_cat = counts.sum(axis=0) / (counts.shape[0] * n)
    p_e = float((p_cat ** 2).sum())
    if np.isclose(p_e, 1.0, rtol=0.0, atol=1e-15):
        raise DegenerateAgreement("所有评分都在同一类别，期望一致率为 1，kappa 无定义")
    if np.all(counts.max(axis=1) == n):
        return 1.0
    return float(statsmodels_fleiss_kappa(counts, method="fleiss"))


def regions_to_frame_labels(regions, n_frames, grid=None):
    """
    区间转逐帧标签：帧中心落在任一半开区间 [start, end) 内记为 1

    参数:
        regions: StressRegion 列表
        n_frames: 帧数
        grid: FrameConfig

    返回:
        FrameLabels
    """
    grid = grid or FrameConfig()
    centers = grid.frame_centers(n_frames)
    labels = np.zeros(n_frames, dtype=np.int8)
    for region in regions:
        labels[(centers >= region.start_s) & (centers < region.end_s)] = 1
    return FrameLabels(labels, grid)


def frame_labels_to_regions(frame_labels):
    """连续重音帧合并为区间，端点对齐到帧中心：[首帧中心, 末帧之后一帧的中心)"""
    grid = frame_labels.grid
    labels = np.concatenate([[0], frame_labels.labels.astype(np.int64), [0]])
    edges = np.diff(labels)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)  # 开区间的末帧号
    centers = grid.frame_centers(frame_labels.n_frames + 1)
    return [StressRegion(float(centers[a]), float(centers[b])) for a, b in zip(starts, stops)]


@dataclass
class AggregationResult:
    frame_labels: FrameLabels
    gold_regions: List[StressRegion]
    kappa: float
    n_annotators: int


def aggregate_regions(annotation_set, grid=None, min_annotators=3, min_kappa=None):
    """
    多标注者区间 → 金标逐帧标签、金标区间和 kappa

    参数:
        annotation_set: AnnotationSet
        grid: FrameConfig；默认使用标注文档中的采样率
        min_annotators: 最少标注者人数
        min_kappa: kappa 质量门限，None 表示不检查

    返回:
        AggregationResult

    异常:
        TooFewAnnotators: 标注者不足
        KappaBelowThreshold: kappa 低于门限
    """
    n_annotators = len(annotation_set.annotations)
    if n_annotators < max(1, min_annotators):
        raise TooFewAnnotators(
            f"{annotation_set.audio_id}: 只有 {n_annotators} 位标注者，至少需要 {min_annotators} 位")
    grid = grid or FrameConfig(sample_rate=annotation_set.sample_rate)
    n_frames = grid.n_frames(annotation_set.n_samples)

    votes = np.zeros(n_frames, dtype=np.int64)
    for annotation in annotation_set.annotations:
        votes += regions_to_frame_labels(annotation.regions, n_frames, grid).labels
    gold = FrameLabels((2 * votes > n_annotators).astype(np.int8), grid)

    if n_annotators < 2:
        kappa = 1.0
    else:
        counts = np.column_stack([n_annotators - votes, votes])
        try:
            kappa = fleiss_kappa(counts)
        except DegenerateAgreement:
            # 所有帧所有人都给出同一类别，视为完全一致
            kappa = 1.0
    if min_kappa is not None and kappa < min_kappa:
        raise KappaBelowThreshold(f"{annotation_set.audio_id}: kappa {kappa:.3f} 低于门限 {min_kappa}")
    logger.debug("%s 聚合完成：%d 个重音帧，kappa=%.3f",
                 annotation_set.audio_id, int(gold.labels.sum()), kappa)
    return AggregationResult(gold, frame_labels_to_regions(gold), kappa, n_annotators)


def majority_regions(annotation_set):
    """
    按时间轴精确求严格多数标注者覆盖的区间（不对齐帧网格）

    用于数据集统计；相接的区间合并。
    """
    n = len(annotation_set.annotations)
    if n == 0:
        return []
    events = Counter()
    for annotation in annotation_set.annotations:
        for region in annotation.regions:
            events[region.start_s] += 1
            events[region.end_s] -= 1
    regions = []
    depth = 0
    open_at = None
    for time in sorted(events):
        depth += events[time]
        covered = 2 * depth > n
        if covered and open_at is None:
            open_at = time
        elif not covered and open_at is not None:
            regions.append(StressRegion(open_at, time))
            open_at = None
    return regions


@dataclass
class DatasetStats:
    n_files: int = 0
    n_regions: int = 0
    mean_region_duration_s: float = 0.0
    total_duration_h: float = 0.0
    per_speaker: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def summary_lines(self):
        lines = [
            f"files: {self.n_files}",
            f"stressed regions: {self.n_regions}",
            f"mean region duration: {self.mean_region_duration_s:.3f} s",
            f"total audio: {self.total_duration_h:.2f} h",
            f"speakers: {len(self.per_speaker)}",
        ]
        for speaker, counts in sorted(self.per_speaker.items()):
            lines.append(f"  {speaker}: {counts['files']} files, {counts['regions']} regions")
        return lines


def dataset_stats(annotation_sets):
    """
    标注语料统计：文件数、重音区间数、平均区间时长、按说话人计数

    区间指严格多数标注者覆盖的时间段（majority_regions）。
    """
    stats = DatasetStats()
    durations = []
    per_speaker = defaultdict(lambda: {"files": 0, "regions": 0})
    total_s = 0.0
    for annotation_set in annotation_sets:
        regions = majority_regions(annotation_set)
        stats.n_files += 1
        total_s += annotation_set.duration_s
        durations.extend(r.duration_s for r in regions)
        per_speaker[annotation_set.speaker]["files"] += 1
        per_speaker[annotation_set.speaker]["regions"] += len(regions)
    stats.n_regions = len(durations)
    stats.mean_region_duration_s = float(np.mean(durations)) if durations else 0.0
    stats.total_duration_h = total_s / 3600.0
    stats.per_speaker = dict(per_speaker)
    return stats
