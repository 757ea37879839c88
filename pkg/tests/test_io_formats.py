"""
测试文件读写：WAV、JSON 文档和二进制特征文件
"""

import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.io import wavfile

from src.annotation import frame_labels_to_regions
from src.config import FeatureConfig, FrameConfig
from src.data_types import (
    Annotation,
    AnnotationSet,
    AudioBuffer,
    FeatureMatrix,
    FrameLabels,
    MtAlignment,
    StressCue,
    StressRegion,
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
)
from src.io_formats import (
    parse_annotation_file,
    parse_gold_labels,
    parse_mt_alignment,
    parse_stress_cues,
    parse_target_cues,
    parse_token_contours,
    parse_word_alignment,
    read_bytes,
    read_feature_header,
    read_feature_matrix,
    read_wav,
    serialize_annotation_set,
    serialize_gold_labels,
    serialize_mt_alignment,
    serialize_stress_cues,
    serialize_token_contours,
    serialize_word_alignment,
    write_feature_matrix,
    write_wav,
)

DATA_DIR = os.path.join(os.path.dirname(__file__), '../data')


def _data(name):
    return read_bytes(os.path.join(DATA_DIR, name))


# 标注文档

def test_parse_annotation_file():
    """测试示例标注文档"""
    annotation_set = parse_annotation_file(_data('annotations_example.json'))
    assert annotation_set.audio_id == "spk01_utt001"
    assert annotation_set.sample_rate == 16000
    assert annotation_set.duration_s == 2.0
    assert len(annotation_set.annotations) == 3, "应有 3 位标注者"
    assert annotation_set.annotations[1].regions[1] == StressRegion(1.2, 1.4)
    assert annotation_set.speaker == "spk01"


def test_annotation_round_trip():
    annotation_set = parse_annotation_file(_data('annotations_example.json'))
    again = parse_annotation_file(serialize_annotation_set(annotation_set))
    assert again == annotation_set, "序列化后再解析应得到相同的标注"


def test_speaker_defaults_to_prefix():
    doc = '{"audio_id": "spk07_utt3", "sample_rate": 16000, "duration_s": 1.0, "annotations": []}'
    assert parse_annotation_file(doc).speaker == "spk07"


@pytest.mark.parametrize("doc, error", [
    ('{"audio_id": "a", "sample_rate": 16000, "duration_s": 1.0, "annotations": '
     '[{"annotator_id": "x", "regions": [{"start_s": 0.5, "end_s": 0.2}]}]}', RangeError),
    ('{"audio_id": "a", "sample_rate": 16000, "duration_s": 1.0, "annotations": '
     '[{"annotator_id": "x", "regions": [{"start_s": 0.5, "end_s": 1.5}]}]}', RangeError),
    ('{"audio_id": "a", "sample_rate": 16000, "duration_s": 1.0, "annotations": '
     '[{"annotator_id": "x", "regions": [{"start_s": -0.1, "end_s": 0.5}]}]}', RangeError),
    ('{"audio_id": "a", "duration_s": 1.0, "annotations": []}', SchemaError),
    ('{"audio_id": "a", "sample_rate": "16k", "duration_s": 1.0, "annotations": []}', SchemaError),
    ('[1, 2, 3]', SchemaError),
    ('{not json', SchemaError),
])
def test_bad_annotation_file(doc, error):
    """测试损坏或越界的标注文档"""
    with pytest.raises(error):
        parse_annotation_file(doc)


def test_gold_labels_round_trip():
    labels = FrameLabels(np.array([0, 1, 1, 0], dtype=np.int8))
    data = serialize_gold_labels("utt", labels, [StressRegion(0.1, 0.2)], 0.75)
    gold = parse_gold_labels(data)
    assert gold.audio_id == "utt"
    np.testing.assert_array_equal(gold.frame_labels.labels, labels.labels)
    assert gold.gold_regions == [StressRegion(0.1, 0.2)]
    assert gold.kappa == 0.75
    assert gold.speaker_id is None
    assert gold.speaker == "utt", "没有 speaker_id 时取 audio_id 前缀"


# 词对齐、MT 对齐、轮廓、提示

def test_parse_word_alignment():
    words = parse_word_alignment(_data('words_example.json'))
    assert [w.text for w in words.words] == ["the", "stress", "matters", "here"]
    assert words.words[1].start_s == 0.4


def test_word_alignment_must_be_ordered():
    doc = ('{"words": [{"text": "b", "start_s": 0.5, "end_s": 0.6}, '
           '{"text": "a", "start_s": 0.1, "end_s": 0.2}]}')
    with pytest.raises(RangeError):
        parse_word_alignment(doc)


def test_parse_mt_alignment():
    alignment = parse_mt_alignment(_data('mt_alignment_example.json'))
    assert alignment.target_words[1] == "zählt", "应保留非 ASCII 字符"
    assert (1, 3) in alignment.links
    assert len(alignment.links) == 4


def test_mt_alignment_out_of_range():
    doc = '{"source_words": ["a"], "target_words": ["b"], "links": [[0, 1]]}'
    with pytest.raises(IndexOutOfBounds):
        parse_mt_alignment(doc)


def test_parse_token_contours():
    contours = parse_token_contours(_data('token_contours_example.json'))
    assert len(contours) == 20
    assert contours.token_word_index[-1] == 3
    assert contours.duration[6] == 4.4


@pytest.mark.parametrize("doc", [
    '{"tokens": ["a", "b"], "token_word_index": [0], "pitch": [1, 1], "energy": [1, 1], "duration": [1, 1]}',
    '{"tokens": ["a"], "token_word_index": [0], "pitch": [1], "energy": [1], "duration": [-1]}',
    '{"tokens": ["a", "b"], "token_word_index": [1, 0], "pitch": [1, 1], "energy": [1, 1], "duration": [1, 1]}',
])
def test_bad_token_contours(doc):
    with pytest.raises(SchemaError):
        parse_token_contours(doc)


def test_parse_cues():
    cues = parse_stress_cues(_data('cues_example.json'))
    assert cues == [StressCue(1, "stress", 1.5, 1.2, 1.25)]
    target = parse_target_cues(serialize_stress_cues(cues, unmapped_sources=[4, 2]))
    assert target.cues == cues
    assert target.unmapped_sources == [2, 4], "unmapped_sources 应排序输出"


def test_cue_with_nonpositive_scale():
    doc = '{"cues": [{"word_index": 0, "word": "a", "pitch_scale": 0, "energy_scale": 1, "duration_scale": 1}]}'
    with pytest.raises(SchemaError):
        parse_stress_cues(doc)


cue_strategy = st.builds(
    StressCue,
    st.integers(0, 50),
    st.text(min_size=1, max_size=8),
    st.floats(0.01, 10.0),
    st.floats(0.01, 10.0),
    st.floats(0.01, 10.0),
)


@given(st.lists(cue_strategy, max_size=10, unique_by=lambda c: c.word_index))
@settings(max_examples=50, deadline=None)
def test_cue_document_round_trip(cues):
    """提示文档序列化后再解析，按词下标排序的结果不变"""
    parsed = parse_stress_cues(serialize_stress_cues(cues))
    assert parsed == sorted(cues, key=lambda c: c.word_index)


# 随机记录的序列化往返

_times = st.floats(0.0, 10.0)
_labels = st.text(max_size=8)


@st.composite
def annotation_sets(draw):
    duration_s = draw(st.floats(0.5, 10.0))
    annotations = []
    for i in range(draw(st.integers(0, 4))):
        spans = draw(st.lists(st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0)), max_size=4))
        regions = tuple(StressRegion(min(a, b) * duration_s, max(a, b) * duration_s)
                        for a, b in spans if min(a, b) * duration_s < max(a, b) * duration_s)
        annotations.append(Annotation(f"annotator{i}", regions))
    speaker_id = draw(st.one_of(st.none(), _labels))
    return AnnotationSet(draw(_labels), duration_s, annotations, draw(st.sampled_from([8000, 16000, 44100])),
                         speaker_id)


@given(annotation_sets())
@settings(max_examples=100, deadline=None)
def test_annotation_document_round_trip(annotation_set):
    assert parse_annotation_file(serialize_annotation_set(annotation_set)) == annotation_set


@st.composite
def word_alignments(draw):
    spans = sorted(draw(st.lists(st.tuples(_times, st.floats(0.001, 1.0)), max_size=10)))
    words = [Word(draw(_labels), start, start + length) for start, length in spans]
    return WordAlignment(words, draw(_labels))


@given(word_alignments())
@settings(max_examples=100, deadline=None)
def test_word_alignment_round_trip(alignment):
    assert parse_word_alignment(serialize_word_alignment(alignment)) == alignment


@st.composite
def mt_alignments(draw):
    source = draw(st.lists(_labels, min_size=1, max_size=8))
    target = draw(st.lists(_labels, min_size=1, max_size=8))
    links = draw(st.frozensets(st.tuples(st.integers(0, len(source) - 1), st.integers(0, len(target) - 1))))
    return MtAlignment(source, target, links)


@given(mt_alignments())
@settings(max_examples=100, deadline=None)
def test_mt_alignment_round_trip(alignment):
    assert parse_mt_alignment(serialize_mt_alignment(alignment)) == alignment


@st.composite
def token_contours(draw):
    n = draw(st.integers(0, 30))
    steps = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    values = st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n)
    return TokenContours(draw(st.lists(_labels, min_size=n, max_size=n)), np.cumsum(steps, dtype=np.int64),
                         draw(values), draw(values),
                         draw(st.lists(st.floats(0.0, 50.0), min_size=n, max_size=n)))


@given(token_contours())
@settings(max_examples=100, deadline=None)
def test_token_contours_round_trip(contours):
    parsed = parse_token_contours(serialize_token_contours(contours))
    assert parsed.tokens == contours.tokens
    for name in ("token_word_index", "pitch", "energy", "duration"):
        np.testing.assert_array_equal(getattr(parsed, name), getattr(contours, name))


@given(st.lists(st.integers(0, 1), max_size=300), st.floats(-1.0, 1.0), st.one_of(st.none(), _labels))
@settings(max_examples=100, deadline=None)
def test_gold_labels_document_round_trip(values, kappa, speaker_id):
    labels = FrameLabels(np.array(values, dtype=np.int8))
    regions = frame_labels_to_regions(labels)
    gold = parse_gold_labels(serialize_gold_labels("spk00_utt000", labels, regions, kappa, speaker_id))
    np.testing.assert_array_equal(gold.frame_labels.labels, labels.labels)
    assert gold.gold_regions == regions
    assert gold.kappa == kappa
    assert gold.speaker_id == speaker_id


# WAV

def _sine(freq=220.0, seconds=0.5, sr=16000, amplitude=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return amplitude * np.sin(2 * np.pi * freq * t)


def test_wav_round_trip_pcm16(tmp_path):
    """16 位 PCM 写入再读回，误差不超过一个量化步长"""
    path = tmp_path / "tone.wav"
    audio = AudioBuffer(_sine(), 16000, "tone")
    write_wav(path, audio)
    loaded = read_wav(path)
    assert loaded.audio_id == "tone", "audio_id 应取文件名"
    assert loaded.sample_rate == 16000
    assert len(loaded.samples) == len(audio.samples)
    assert np.max(np.abs(loaded.samples - audio.samples)) <= 1.0 / 32768


def test_wav_round_trip_float32(tmp_path):
    path = tmp_path / "tone.wav"
    audio = AudioBuffer(_sine(), 16000, "tone")
    write_wav(path, audio, encoding="float32")
    loaded = read_wav(path)
    np.testing.assert_allclose(loaded.samples, audio.samples.astype(np.float32), rtol=0, atol=0)


def test_stereo_is_averaged(tmp_path):
    path = tmp_path / "stereo.wav"
    data = np.zeros((100, 2), dtype=np.int16)
    data[:, 0] = 16384
    wavfile.write(path, 16000, data)
    loaded = read_wav(path)
    assert loaded.samples.shape == (100,)
    np.testing.assert_allclose(loaded.samples, 0.25)


def test_malformed_wav(tmp_path):
    path = tmp_path / "broken.wav"
    path.write_bytes(b"this is not a wav file")
    with pytest.raises(MalformedContainer):
        read_wav(path)


def test_unsupported_encoding(tmp_path):
    """8 位 PCM 不受支持"""
    path = tmp_path / "u8.wav"
    wavfile.write(path, 16000, np.full(100, 128, dtype=np.uint8))
    with pytest.raises(UnsupportedEncoding):
        read_wav(path)


def test_empty_wav(tmp_path):
    path = tmp_path / "empty.wav"
    wavfile.write(path, 16000, np.zeros(0, dtype=np.int16))
    with pytest.raises(EmptyAudio):
        read_wav(path)


def test_missing_wav(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "missing.wav")


# 特征文件

def _feature_matrix(config, rows=10, seed=0):
    rng = np.random.default_rng(seed)
    width = len(config.column_layout())
    return FeatureMatrix(rng.normal(size=(rows, width)), config.column_layout(),
                         config.frame.frame_centers(rows), config.digest())


def test_feature_file_round_trip(tmp_path):
    """特征文件逐位还原，文件头记录版本、形状和摘要"""
    config = FeatureConfig(feature_set="f0e")
    matrix = _feature_matrix(config)
    path = tmp_path / "utt.feat"
    write_feature_matrix(matrix, path)

    raw = path.read_bytes()
    assert raw[:4] == b"SFEA", "魔数错误"
    assert len(raw) == 48 + 10 * 2 * 4, "文件长度应为 48 字节头 + f32 数据"
    assert read_feature_header(path) == (1, 10, 2, config.digest())

    loaded = read_feature_matrix(path, config)
    np.testing.assert_array_equal(loaded.values, matrix.values)
    assert loaded.column_layout == ["f0", "energy"]
    np.testing.assert_allclose(loaded.frame_times, matrix.frame_times)
    assert loaded.config_digest == config.digest()


def test_empty_feature_file_round_trip(tmp_path):
    """0 行的特征矩阵也是合法文件，只有 48 字节头"""
    config = FeatureConfig(feature_set="f0e")
    path = tmp_path / "empty.feat"
    write_feature_matrix(_feature_matrix(config, rows=0), path)
    assert path.stat().st_size == 48
    assert read_feature_header(path) == (1, 0, 2, config.digest())
    loaded = read_feature_matrix(path, config)
    assert loaded.values.shape == (0, 2)
    assert len(loaded.frame_times) == 0


@given(arrays(np.float32, st.tuples(st.integers(0, 20), st.just(2)),
              elements=st.floats(-1e6, 1e6, width=32)))
@settings(max_examples=50, deadline=None)
def test_feature_file_bit_exact(tmp_path_factory, values):
    """任意有限 f32 矩阵写入再读回逐位相同"""
    config = FeatureConfig(feature_set="f0e")
    matrix = FeatureMatrix(values, config.column_layout(), config.frame.frame_centers(len(values)), config.digest())
    path = tmp_path_factory.mktemp("feat") / "utt.feat"
    write_feature_matrix(matrix, path)
    loaded = read_feature_matrix(path, config)
    assert loaded.values.tobytes() == values.tobytes()


def test_feature_file_without_config(tmp_path):
    config = FeatureConfig()
    path = tmp_path / "utt.feat"
    write_feature_matrix(_feature_matrix(config, rows=3), path)
    loaded = read_feature_matrix(path)
    assert loaded.width == 67
    assert loaded.column_layout == config.column_layout()


def test_feature_digest_mismatch(tmp_path):
    written = FeatureConfig(feature_set="f0e")
    path = tmp_path / "utt.feat"
    write_feature_matrix(_feature_matrix(written), path)
    other = FeatureConfig(frame=FrameConfig(hop=128), feature_set="f0e")
    with pytest.raises(DigestMismatch):
        read_feature_matrix(path, other)


def test_feature_file_rejects_non_finite(tmp_path):
    config = FeatureConfig(feature_set="f0e")
    matrix = _feature_matrix(config)
    matrix.values[3, 1] = np.nan
    path = tmp_path / "nan.feat"
    with pytest.raises(NonFinite):
        write_feature_matrix(matrix, path)
    assert not path.exists(), "写入失败时不应留下文件"


def test_truncated_feature_file(tmp_path):
    config = FeatureConfig(feature_set="f0e")
    path = tmp_path / "utt.feat"
    write_feature_matrix(_feature_matrix(config), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(MalformedContainer):
        read_feature_matrix(path, config)
    path.write_bytes(b"SFEA")
    with pytest.raises(MalformedContainer):
        read_feature_header(path)
