"""
按 MT 词对齐把源语言重音提示映射到目标语言词

一对多时每个对齐的目标词都得到同样的缩放因子；多对一时逐项取最大值；
没有对齐链接的重音源词记入 unmapped_sources。
"""

import logging
from collections import defaultdict

from src.data_types import StressCue, TargetCueSet
from src.errors import IndexOutOfBounds

logger = logging.getLogger(__name__)


def map_cues(source_cues, alignment):
    """
    参数:
        source_cues: 源语言 StressCue 列表
        alignment: MtAlignment

    返回:
        TargetCueSet，cues 按目标词下标排序且下标唯一

    异常:
        IndexOutOfBounds: 提示的词下标超出源词表
    """
    targets_of = defaultdict(set)
    for s, t in alignment.links:
        targets_of[s].add(t)

    merged = {}
    provenance = defaultdict(set)
    unmapped = set()
    for cue in source_cues:
        if not 0 <= cue.word_index < len(alignment.source_words):
            raise IndexOutOfBounds(
                f"提示词下标 {cue.word_index} 超出源词表（共 {len(alignment.source_words)} 个）")
        targets = targets_of.get(cue.word_index)
        if not targets:
            unmapped.add(cue.word_index)
            continue
        for t in targets:
            provenance[t].add(cue.word_index)
            if t in merged:
                merged[t] = tuple(max(a, b) for a, b in zip(merged[t], cue.scales))
            else:
                merged[t] = cue.scales

    cues = [StressCue(t, alignment.target_words[t], *merged[t]) for t in sorted(merged)]
    if unmapped:
        logger.warning("%d 个源语言重音词没有对齐: %s", len(unmapped), sorted(unmapped))
    return TargetCueSet(cues, sorted(unmapped), {t: sorted(provenance[t]) for t in sorted(provenance)})
