"""
测试重音提示从源语言词到目标语言词的映射
"""

import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.cue_transfer import map_cues
from src.data_types import MtAlignment, StressCue
from src.errors import IndexOutOfBounds
from src.io_formats import parse_mt_alignment, parse_stress_cues, read_bytes

DATA_DIR = os.path.join(os.path.dirname(__file__), '../data')


def _alignment(n_source, n_target, links):
    return MtAlignment([f"s{i}" for i in range(n_source)], [f"t{j}" for j in range(n_target)],
                       frozenset(links))


def test_example_files():
    """stress -> Betonung"""
    alignment = parse_mt_alignment(read_bytes(os.path.join(DATA_DIR, 'mt_alignment_example.json')))
    cues = parse_stress_cues(read_bytes(os.path.join(DATA_DIR, 'cues_example.json')))
    result = map_cues(cues, alignment)
    assert result.cues == [StressCue(3, "Betonung", 1.5, 1.2, 1.25)]
    assert result.unmapped_sources == []
    assert result.provenance == {3: [1]}


def test_identity_alignment():
    """恒等对齐下提示原样保留（只换成目标词文本）"""
    alignment = _alignment(4, 4, [(i, i) for i in range(4)])
    cues = [StressCue(2, "s2", 1.4, 1.1, 1.0)]
    result = map_cues(cues, alignment)
    assert result.cues == [StressCue(2, "t2", 1.4, 1.1, 1.0)]
    again = map_cues([StressCue(c.word_index, f"s{c.word_index}", *c.scales) for c in result.cues], alignment)
    assert again.cues == result.cues


def test_one_to_many():
    """一个源词对应两个目标词，两个目标词都得到同样的因子"""
    alignment = _alignment(3, 4, [(0, 0), (1, 1), (1, 2), (2, 3)])
    result = map_cues([StressCue(1, "s1", 1.5, 1.2, 1.0)], alignment)
    assert [c.word_index for c in result.cues] == [1, 2]
    assert all(c.scales == (1.5, 1.2, 1.0) for c in result.cues)


def test_many_to_one_takes_maximum():
    alignment = _alignment(2, 1, [(0, 0), (1, 0)])
    cues = [StressCue(0, "s0", 1.5, 1.1, 1.0), StressCue(1, "s1", 1.2, 1.3, 1.25)]
    result = map_cues(cues, alignment)
    assert len(result.cues) == 1
    assert result.cues[0].scales == (1.5, 1.3, 1.25), "多对一时逐项取最大值"
    assert result.provenance == {0: [0, 1]}


def test_unmapped_source():
    alignment = _alignment(3, 2, [(0, 0), (2, 1)])
    result = map_cues([StressCue(1, "s1", 1.5, 1.0, 1.0)], alignment)
    assert result.cues == []
    assert result.unmapped_sources == [1]


def test_index_out_of_bounds():
    alignment = _alignment(2, 2, [(0, 0)])
    with pytest.raises(IndexOutOfBounds):
        map_cues([StressCue(5, "x", 1.5, 1.0, 1.0)], alignment)


def test_empty_cues():
    result = map_cues([], _alignment(2, 2, [(0, 0)]))
    assert result.cues == [] and result.unmapped_sources == []


@st.composite
def transfer_cases(draw):
    n_source = draw(st.integers(1, 8))
    n_target = draw(st.integers(1, 8))
    links = draw(st.sets(st.tuples(st.integers(0, n_source - 1), st.integers(0, n_target - 1)), max_size=20))
    stressed = draw(st.sets(st.integers(0, n_source - 1)))
    scale = st.floats(0.5, 2.0)
    cues = [StressCue(i, f"s{i}", draw(scale), draw(scale), draw(scale)) for i in sorted(stressed)]
    return _alignment(n_source, n_target, links), cues


@given(transfer_cases())
@settings(max_examples=200, deadline=None)
def test_transfer_conservation(case):
    """每个目标提示都可追溯到源提示，每个重音源词要么被映射，要么记为 unmapped"""
    alignment, cues = case
    result = map_cues(cues, alignment)
    by_source = {c.word_index: c for c in cues}
    indices = [c.word_index for c in result.cues]
    assert indices == sorted(set(indices)), "目标提示按下标排序且唯一"
    for cue in result.cues:
        sources = result.provenance[cue.word_index]
        assert all((s, cue.word_index) in alignment.links for s in sources)
        for k in range(3):
            assert cue.scales[k] == max(by_source[s].scales[k] for s in sources)
    mapped = {s for sources in result.provenance.values() for s in sources}
    assert mapped | set(result.unmapped_sources) == set(by_source)
    assert not mapped & set(result.unmapped_sources)
