"""
外部文件的读写：WAV 音频、各类 JSON 文档和二进制特征文件

JSON 文档一份一个对象，便于 diff 和手工编辑测试数据；特征矩阵使用
自定义二进制头 + 小端 float32，保证逐位可复现。
"""

import json
import logging
import os
import struct
import tempfile

import numpy as np
from scipy.io import wavfile

from src.config import FeatureConfig, FrameConfig
from src.data_types import (
    Annotation,
    AnnotationSet,
    AudioBuffer,
    FeatureMatrix,
    FrameLabels,
    GoldLabels,
    MtAlignment,
    StressCue,
    StressRegion,
    TargetCueSet,
    TokenContours,
    Word,
    WordAlignment,
)
from src.errors import (
    DigestMismatch,
    EmptyAudio,
    IndexOutOfBounds,
    MalformedContainer,
    NonFinite,
    RangeError,
    SchemaError,
    UnsupportedEncoding,
    VersionMismatch,
)

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"SFEA"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII32s")

_WAVE_PCM = 1
_WAVE_FLOAT = 3
_WAVE_EXTENSIBLE = 0xFFFE


# 通用工具

def write_bytes_atomic(path, data):
    """先写同目录临时文件再改名，避免留下写了一半的输出"""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def dump_document(doc):
    """规范化 JSON：两空格缩进，保留非 ASCII 字符，末尾换行"""
    return (json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def write_json_atomic(path, doc):
    write_bytes_atomic(path, dump_document(doc))


def read_json(path):
    return load_document(read_bytes(path))


def load_document(data):
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"文档不是合法的 UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"JSON 解析失败: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("文档顶层必须是对象")
    return doc


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _get(doc, key, kind, where):
    if key not in doc:
        raise SchemaError(f"{where} 缺少字段 {key!r}")
    value = doc[key]
    if kind == "number":
        ok = _is_number(value) and np.isfinite(value)
    elif kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise SchemaError(f"{where} 字段 {key!r} 类型错误: {value!r}")
    return value


def _number_list(doc, key, where):
    values = _get(doc, key, list, where)
    if not all(_is_number(v) and np.isfinite(v) for v in values):
        raise SchemaError(f"{where} 字段 {key!r} 必须全部是有限数值")
    return values


def _int_list(doc, key, where):
    values = _get(doc, key, list, where)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        raise SchemaError(f"{where} 字段 {key!r} 必须全部是整数")
    return values


# WAV

def _wave_format(data, path):
    """遍历 RIFF 块，返回 fmt 块中的 (编码标记, 位深)"""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer(f"{path}: 不是 RIFF/WAVE 文件")
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack("<4sI", data[pos:pos + 8])
        if chunk_id == b"fmt ":
            if size < 16 or pos + 8 + 16 > len(data):
                break
            tag, _channels, _rate, _byte_rate, _align, bits = struct.unpack("<HHIIHH", data[pos + 8:pos + 24])
            return tag, bits
        pos += 8 + size + (size & 1)
    raise MalformedContainer(f"{path}: 缺少 fmt 块")


def read_wav(path):
    """
    读取 WAV 文件为单声道 AudioBuffer

    参数:
        path: 文件路径

    返回:
        AudioBuffer，采样值缩放到 [-1,1]，多声道取平均，不做重采样

    异常:
        FileNotFoundError: 文件不存在
        MalformedContainer: RIFF 头损坏
        UnsupportedEncoding: 非 16 位 PCM / 32 位浮点编码
        EmptyAudio: 没有采样点
    """
    path = os.fspath(path)
    data = read_bytes(path)
    tag, bits = _wave_format(data, path)
    if tag not in (_WAVE_PCM, _WAVE_FLOAT, _WAVE_EXTENSIBLE):
        raise UnsupportedEncoding(f"{path}: 不支持的编码标记 0x{tag:04x}")
    if (tag == _WAVE_PCM and bits != 16) or (tag == _WAVE_FLOAT and bits != 32):
        raise UnsupportedEncoding(f"{path}: 不支持的位深 {bits}")
    try:
        sample_rate, samples = wavfile.read(path)
    except ValueError as exc:
        raise MalformedContainer(f"{path}: {exc}") from None

    if samples.dtype == np.int16:
        samples = samples.astype(np.float64) / 32768.0
    elif samples.dtype == np.float32:
        samples = samples.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"{path}: 不支持的采样类型 {samples.dtype}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise EmptyAudio(f"{path}: 音频没有采样点")
    audio_id = os.path.splitext(os.path.basename(path))[0]
    return AudioBuffer(samples, int(sample_rate), audio_id)


def write_wav(path, audio, encoding="pcm16"):
    """把 AudioBuffer 写为 16 位 PCM（默认）或 32 位浮点 WAV"""
    if encoding == "pcm16":
        ints = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype(np.int16)
        payload = ints
    elif encoding == "float32":
        payload = audio.samples.astype(np.float32)
    else:
        raise UnsupportedEncoding(f"未知编码: {encoding}")
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    wavfile.write(path, audio.sample_rate, payload)


# 标注文档

def parse_annotation_file(data):
    """
    解析多标注者重音区间文档

    参数:
        data: 文档字节串或字符串

    返回:
        AnnotationSet

    异常:
        SchemaError: 缺字段或类型错误
        RangeError: 区间倒置、为负或超出音频时长
    """
    doc = load_document(data)
    where = "标注文档"
    audio_id = _get(doc, "audio_id", str, where)
    sample_rate = _get(doc, "sample_rate", "int", where)
    duration_s = _get(doc, "duration_s", "number", where)
    speaker_id = doc.get("speaker_id")
    if speaker_id is not None and not isinstance(speaker_id, str):
        raise SchemaError(f"{where} 字段 'speaker_id' 必须是字符串")
    if sample_rate <= 0 or duration_s < 0:
        raise RangeError(f"{audio_id}: 采样率或时长无效")

    annotations = []
    for i, entry in enumerate(_get(doc, "annotations", list, where)):
        item_where = f"{where} annotations[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{item_where} 必须是对象")
        annotator_id = _get(entry, "annotator_id", str, item_where)
        regions = []
        for j, region in enumerate(_get(entry, "regions", list, item_where)):
            region_where = f"{item_where} regions[{j}]"
            if not isinstance(region, dict):
                raise SchemaError(f"{region_where} 必须是对象")
            start = _get(region, "start_s", "number", region_where)
            end = _get(region, "end_s", "number", region_where)
            if end > duration_s:
                raise RangeError(f"{audio_id}: 区间 [{start}, {end}] 超出音频时长 {duration_s}")
            regions.append(StressRegion(float(start), float(end)))
        annotations.append(Annotation(annotator_id, tuple(regions)))
    return AnnotationSet(audio_id, float(duration_s), annotations, sample_rate, speaker_id)


def serialize_annotation_set(annotation_set):
    doc = {
        "audio_id": annotation_set.audio_id,
        "sample_rate": int(annotation_set.sample_rate),
        "duration_s": float(annotation_set.duration_s),
        "annotations": [
            {
                "annotator_id": a.annotator_id,
                "regions": [{"start_s": r.start_s, "end_s": r.end_s} for r in a.regions],
            }
            for a in annotation_set.annotations
        ],
    }
    if annotation_set.speaker_id is not None:
        doc["speaker_id"] = annotation_set.speaker_id
    return dump_document(doc)


def serialize_gold_labels(audio_id, frame_labels, gold_regions, kappa, speaker_id=None):
    doc = {
        "audio_id": audio_id,
        "frame_labels": [int(v) for v in frame_labels.labels],
        "gold_regions": [{"start_s": r.start_s, "end_s": r.end_s} for r in gold_regions],
        "kappa": float(kappa),
    }
    if speaker_id is not None:
        doc["speaker_id"] = speaker_id
    return dump_document(doc)


def parse_gold_labels(data, grid=None):
    """解析金标文档，返回 GoldLabels；grid 为逐帧标签所在的分帧网格"""
    doc = load_document(data)
    where = "金标文档"
    audio_id = _get(doc, "audio_id", str, where)
    labels = _int_list(doc, "frame_labels", where)
    if any(v not in (0, 1) for v in labels):
        raise SchemaError(f"{where} frame_labels 只能是 0 或 1")
    regions = []
    for i, region in enumerate(_get(doc, "gold_regions", list, where)):
        region_where = f"{where} gold_regions[{i}]"
        if not isinstance(region, dict):
            raise SchemaError(f"{region_where} 必须是对象")
        regions.append(StressRegion(float(_get(region, "start_s", "number", region_where)),
                                    float(_get(region, "end_s", "number", region_where))))
    kappa = _get(doc, "kappa", "number", where)
    speaker_id = doc.get("speaker_id")
    if speaker_id is not None and not isinstance(speaker_id, str):
        raise SchemaError(f"{where} 字段 'speaker_id' 必须是字符串")
    frame_labels = FrameLabels(np.array(labels, dtype=np.int8), grid or FrameConfig())
    return GoldLabels(audio_id, frame_labels, regions, float(kappa), speaker_id)


# ASR 词对齐

def parse_word_alignment(data):
    doc = load_document(data)
    where = "词对齐文档"
    audio_id = doc.get("audio_id", "")
    if not isinstance(audio_id, str):
        raise SchemaError(f"{where} 字段 'audio_id' 必须是字符串")
    words = []
    previous_start = 0.0
    for i, entry in enumerate(_get(doc, "words", list, where)):
        item_where = f"{where} words[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{item_where} 必须是对象")
        text = _get(entry, "text", str, item_where)
        start = float(_get(entry, "start_s", "number", item_where))
        end = float(_get(entry, "end_s", "number", item_where))
        if start < 0 or end <= start:
            raise RangeError(f"{item_where}: 无效时间区间 [{start}, {end}]")
        if start < previous_start:
            raise RangeError(f"{item_where}: 词必须按开始时间排序")
        previous_start = start
        words.append(Word(text, start, end))
    return WordAlignment(words, audio_id)


def serialize_word_alignment(alignment):
    return dump_document({
        "audio_id": alignment.audio_id,
        "words": [{"text": w.text, "start_s": w.start_s, "end_s": w.end_s} for w in alignment.words],
    })


# MT 对齐

def parse_mt_alignment(data):
    doc = load_document(data)
    where = "MT 对齐文档"
    source_words = _get(doc, "source_words", list, where)
    target_words = _get(doc, "target_words", list, where)
    if not all(isinstance(w, str) for w in source_words + target_words):
        raise SchemaError(f"{where} 词表必须全部是字符串")
    links = set()
    for i, link in enumerate(_get(doc, "links", list, where)):
        if (not isinstance(link, list) or len(link) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in link)):
            raise SchemaError(f"{where} links[{i}] 必须是两个整数")
        s, t = link
        if not 0 <= s < len(source_words):
            raise IndexOutOfBounds(f"{where} links[{i}]: 源词下标 {s} 越界（共 {len(source_words)} 个）")
        if not 0 <= t < len(target_words):
            raise IndexOutOfBounds(f"{where} links[{i}]: 目标词下标 {t} 越界（共 {len(target_words)} 个）")
        links.add((s, t))
    return MtAlignment(list(source_words), list(target_words), frozenset(links))


def serialize_mt_alignment(alignment):
    return dump_document({
        "source_words": list(alignment.source_words),
        "target_words": list(alignment.target_words),
        "links": [[s, t] for s, t in sorted(alignment.links)],
    })


# token 轮廓

def parse_token_contours(data):
    """
    解析 TTS 方差预测器输出文档

    异常:
        SchemaError: 缺字段、长度不一致、时长为负或词下标不是非降序
    """
    doc = load_document(data)
    where = "token 轮廓文档"
    tokens = _get(doc, "tokens", list, where)
    if not all(isinstance(t, str) for t in tokens):
        raise SchemaError(f"{where} tokens 必须全部是字符串")
    word_index = _int_list(doc, "token_word_index", where)
    pitch = _number_list(doc, "pitch", where)
    energy = _number_list(doc, "energy", where)
    duration = _number_list(doc, "duration", where)
    n = len(tokens)
    if not (len(word_index) == len(pitch) == len(energy) == len(duration) == n):
        raise SchemaError(f"{where} 各字段长度必须相同")
    if any(d < 0 for d in duration):
        raise SchemaError(f"{where} 时长不能为负")
    if any(w < 0 for w in word_index) or any(b < a for a, b in zip(word_index, word_index[1:])):
        raise SchemaError(f"{where} token_word_index 必须非负且非降序")
    return TokenContours(tokens, word_index, pitch, energy, duration)


def serialize_token_contours(contours):
    return dump_document({
        "tokens": list(contours.tokens),
        "token_word_index": [int(v) for v in contours.token_word_index],
        "pitch": [float(v) for v in contours.pitch],
        "energy": [float(v) for v in contours.energy],
        "duration": [float(v) for v in contours.duration],
    })


def serialize_modified_contours(modified):
    return dump_document({
        "tokens": list(modified.tokens),
        "token_word_index": [int(v) for v in modified.token_word_index],
        "pitch": [float(v) for v in modified.pitch],
        "energy": [float(v) for v in modified.energy],
        "duration": [int(v) for v in modified.duration],
        "applied_cues": modified.applied_cues,
    })


# 重音提示

def _parse_cue_list(doc, where):
    cues = []
    for i, entry in enumerate(_get(doc, "cues", list, where)):
        item_where = f"{where} cues[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{item_where} 必须是对象")
        index = _get(entry, "word_index", "int", item_where)
        if index < 0:
            raise IndexOutOfBounds(f"{item_where}: 词下标不能为负: {index}")
        scales = [float(_get(entry, key, "number", item_where))
                  for key in ("pitch_scale", "energy_scale", "duration_scale")]
        if any(s <= 0 for s in scales):
            raise SchemaError(f"{item_where}: 缩放因子必须为正数")
        cues.append(StressCue(index, _get(entry, "word", str, item_where), *scales))
    return cues


def parse_stress_cues(data):
    return _parse_cue_list(load_document(data), "重音提示文档")


def parse_target_cues(data):
    """解析目标语言提示文档，可选字段 unmapped_sources"""
    doc = load_document(data)
    cues = _parse_cue_list(doc, "重音提示文档")
    unmapped = doc.get("unmapped_sources", [])
    if not isinstance(unmapped, list) or not all(isinstance(v, int) for v in unmapped):
        raise SchemaError("unmapped_sources 必须是整数列表")
    return TargetCueSet(cues, list(unmapped))


def serialize_stress_cues(cues, unmapped_sources=None):
    if isinstance(cues, TargetCueSet):
        unmapped_sources = cues.unmapped_sources if unmapped_sources is None else unmapped_sources
        cues = cues.cues
    doc = {
        "cues": [
            {
                "word_index": int(c.word_index),
                "word": c.word,
                "pitch_scale": float(c.pitch_scale),
                "energy_scale": float(c.energy_scale),
                "duration_scale": float(c.duration_scale),
            }
            for c in sorted(cues, key=lambda c: c.word_index)
        ]
    }
    if unmapped_sources is not None:
        doc["unmapped_sources"] = sorted(int(v) for v in unmapped_sources)
    return dump_document(doc)


# 特征文件

def write_feature_matrix(matrix, path):
    """
    写二进制特征文件："SFEA" | u32 版本 | u32 行 | u32 列 | 32 字节配置摘要 | 小端 f32 数据

    异常:
        NonFinite: 矩阵含 NaN 或无穷
    """
    values = np.asarray(matrix.values, dtype=np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"{path}: 特征矩阵含有非有限值，拒绝写入")
    digest = bytes.fromhex(matrix.config_digest) if matrix.config_digest else bytes(32)
    if len(digest) != 32:
        raise SchemaError(f"配置摘要必须是 32 字节: {matrix.config_digest!r}")
    rows, cols = values.shape
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, rows, cols, digest)
    write_bytes_atomic(path, header + values.astype("<f4").tobytes())


def read_feature_header(path):
    """只读文件头，返回 (版本, 行, 列, 摘要十六进制串)"""
    with open(path, "rb") as fh:
        head = fh.read(_FEATURE_HEADER.size)
    return _unpack_header(head, path)


def _unpack_header(head, path):
    if len(head) < _FEATURE_HEADER.size:
        raise MalformedContainer(f"{path}: 特征文件头不完整")
    magic, version, rows, cols, digest = _FEATURE_HEADER.unpack(head[:_FEATURE_HEADER.size])
    if magic != FEATURE_MAGIC:
        raise MalformedContainer(f"{path}: 魔数错误 {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionMismatch(f"{path}: 不支持的特征文件版本 {version}")
    return version, rows, cols, ("" if digest == bytes(32) else digest.hex())


def read_feature_matrix(path, config=None):
    """
    读特征文件

    参数:
        path: 文件路径
        config: 期望的 FeatureConfig；给出时校验摘要并据此恢复列名和帧时刻

    返回:
        FeatureMatrix

    异常:
        MalformedContainer: 文件头或数据长度错误
        DigestMismatch: 特征不是在期望的配置下计算的
    """
    data = read_bytes(path)
    _version, rows, cols, digest = _unpack_header(data, path)
    payload = data[_FEATURE_HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise MalformedContainer(f"{path}: 数据长度 {len(payload)} 与 {rows}x{cols} 不符")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(rows, cols)

    if config is not None:
        expected = config.digest()
        if digest != expected:
            raise DigestMismatch(f"{path}: 特征配置摘要不匹配")
        layout = config.column_layout()
        frame = config.frame
    else:
        frame = FrameConfig()
        default = FeatureConfig()
        if cols == len(default.column_layout("f0e")):
            layout = default.column_layout("f0e")
        elif cols == len(default.column_layout("full")):
            layout = default.column_layout("full")
        else:
            layout = [f"c{i}" for i in range(cols)]
    if len(layout) != cols:
        raise DigestMismatch(f"{path}: 列数 {cols} 与配置的列布局不一致")
    return FeatureMatrix(values, layout, frame.frame_centers(rows), digest)
