"""
合成语料：类语音的谐波信号、词时间戳、多标注者标注和注入的重音词

重音词的基频提高 50%、能量提高 40%，其余词保持说话人的基准音高。
同时生成与之配套的 MT 对齐和 TTS token 轮廓，用于端到端检查。
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.data_types import (
    Annotation,
    AnnotationSet,
    AudioBuffer,
    MtAlignment,
    StressRegion,
    TokenContours,
    Word,
    WordAlignment,
)

logger = logging.getLogger(__name__)

VOCABULARY = (
    "signal", "energy", "matrix", "theorem", "vector", "graph", "system", "integral",
    "proof", "model", "current", "voltage", "entropy", "sample", "filter", "kernel",
)
PITCH_BOOST = 1.5
ENERGY_BOOST = 1.4
N_ANNOTATORS = 3


@dataclass
class SyntheticUtterance:
    audio: AudioBuffer
    words: WordAlignment
    annotations: AnnotationSet
    stressed_words: list
    alignment: MtAlignment
    contours: TokenContours


def _tone(n_samples, sr, f0_start, f0_end, amplitude, n_harmonics=5):
    """基频线性滑动的谐波复合音，两端 20 ms 升余弦渐变"""
    f0 = np.linspace(f0_start, f0_end, n_samples)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    signal = sum(np.sin(h * phase) / h for h in range(1, n_harmonics + 1))
    signal /= np.sqrt(np.mean(signal ** 2))
    ramp = min(int(0.02 * sr), n_samples // 2)
    envelope = np.ones(n_samples)
    if ramp > 0:
        edge = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, ramp))
        envelope[:ramp] = edge
        envelope[-ramp:] = edge[::-1]
    return amplitude * envelope * signal


def synth_translation(source_words, rng):
    """目标语言译文：源词顺序打乱后一对一链接，每个目标词 2~4 个字符 token"""
    n = len(source_words)
    order = rng.permutation(n)
    target_words = [f"{source_words[s]}_t" for s in order]
    links = frozenset((int(s), t) for t, s in enumerate(order))
    tokens, word_index, pitch, energy, duration = [], [], [], [], []
    for t, word in enumerate(target_words):
        for ch in word[:int(rng.integers(2, 5))]:
            tokens.append(ch)
            word_index.append(t)
            pitch.append(float(rng.uniform(0.5, 1.5)))
            energy.append(float(rng.uniform(0.5, 1.5)))
            duration.append(float(rng.integers(2, 9)))
    contours = TokenContours(tokens, word_index, pitch, energy, duration)
    return MtAlignment(list(source_words), target_words, links), contours


def synth_utterance(audio_id, speaker_id, rng, sample_rate=16000, n_words=6, speaker_f0=140.0):
    """
    生成一句合成语音

    参数:
        audio_id: 语句编号
        speaker_id: 说话人编号
        rng: numpy Generator
        sample_rate: 采样率
        n_words: 词数
        speaker_f0: 说话人的基准基频 (Hz)

    返回:
        SyntheticUtterance
    """
    stressed = int(rng.integers(n_words))
    texts = [str(w) for w in rng.choice(VOCABULARY, size=n_words)]
    pieces = [np.zeros(int(0.15 * sample_rate))]
    words = []
    cursor = len(pieces[0])
    for i, text in enumerate(texts):
        n = int(rng.uniform(0.28, 0.42) * sample_rate)
        f0 = speaker_f0 * rng.uniform(0.95, 1.05)
        amplitude = 0.25 * rng.uniform(0.9, 1.1)
        if i == stressed:
            f0 *= PITCH_BOOST
            amplitude *= ENERGY_BOOST
        pieces.append(_tone(n, sample_rate, f0, f0 * rng.uniform(0.97, 1.03), amplitude))
        words.append(Word(text, cursor / sample_rate, (cursor + n) / sample_rate))
        cursor += n
        gap = np.zeros(int(rng.uniform(0.06, 0.12) * sample_rate))
        pieces.append(gap)
        cursor += len(gap)
    pieces.append(np.zeros(int(0.1 * sample_rate)))
    samples = np.concatenate(pieces)
    samples += rng.normal(0.0, 0.002, size=samples.size)
    samples = np.clip(samples, -1.0, 1.0)
    duration_s = len(samples) / sample_rate

    target = words[stressed]
    annotations = []
    for k in range(N_ANNOTATORS):
        start = max(0.0, target.start_s + rng.uniform(-0.02, 0.02))
        end = min(duration_s, target.end_s + rng.uniform(-0.02, 0.02))
        annotations.append(Annotation(f"annotator{k + 1}", (StressRegion(start, end),)))

    alignment, contours = synth_translation(texts, rng)
    return SyntheticUtterance(
        audio=AudioBuffer(samples, sample_rate, audio_id),
        words=WordAlignment(words, audio_id),
        annotations=AnnotationSet(audio_id, duration_s, annotations, sample_rate, speaker_id),
        stressed_words=[stressed],
        alignment=alignment,
        contours=contours,
    )


def synth_corpus(n_utterances=50, n_speakers=10, seed=0, sample_rate=16000, n_words=6):
    """按说话人轮流生成 n_utterances 句合成语音"""
    rng = np.random.default_rng(seed)
    speaker_f0 = rng.uniform(100.0, 180.0, size=n_speakers)
    corpus = []
    for u in range(n_utterances):
        s = u % n_speakers
        speaker_id = f"spk{s:02d}"
        corpus.append(synth_utterance(f"{speaker_id}_utt{u:03d}", speaker_id, rng,
                                      sample_rate, n_words, float(speaker_f0[s])))
    logger.info("合成了 %d 句话，%d 个说话人", n_utterances, n_speakers)
    return corpus
