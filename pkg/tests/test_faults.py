from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftconv.errors import FaultSpecError
from ftconv.faults import (
    Dims,
    FaultHook,
    FaultSpec,
    GroundTruth,
    LayerShape,
    campaign,
    dumps_corpus,
    fault_effect,
    ground_truth,
    inject,
    read_corpus,
    safe_bits,
    stage_within,
    write_corpus,
)
from ftconv.layer import ConvLayer
from ftconv.tensor import ConvParams

SHAPES = [LayerShape(2, 3, 8, 4, 3, 6), LayerShape(2, 4, 6, 4, 3, 4, 2), LayerShape(2, 4, 4, 2, 1, 4)]


def test_inject_single_element():
    O = np.random.default_rng(0).normal(size=(2, 3, 4, 4))
    spec = FaultSpec(0, "output_block", i=1, j=0, elem=(0, 0), magnitude="add", value=-5.0)
    O2, truth = inject(O, spec)
    diff = O2 != O
    assert diff.sum() == 1 and diff[1, 0, 0, 0]
    assert O2[1, 0, 0, 0] == pytest.approx(O[1, 0, 0, 0] - 5)
    assert truth.pattern == "block" and truth.expected_stage() == "coc"


def test_inject_whole_row():
    O = np.ones((3, 4, 2, 2), np.float32)
    O2, truth = inject(O, FaultSpec(0, "output_row", i=1, magnitude="scale", seed=3))
    assert (O2 != O).sum() == 4 * 2 * 2
    assert (O2[1] != O[1]).all()
    assert truth.pattern == "row" and truth.corrupted_blocks == [(1, m) for m in range(4)]
    assert truth.expected_stage(rc_enabled=True) == "rc"
    assert truth.expected_stage(rc_enabled=False) == "fc"


def test_scale_magnitude_range():
    O = np.ones((2, 2, 8, 8))
    O2, _ = inject(O, FaultSpec(0, "output_column", j=1, magnitude="scale", seed=11))
    f = O2[:, 1]
    assert (f >= 1.5).all() and (f <= 3.0).all()


def test_checksum_ground_truth():
    assert ground_truth(FaultSpec(0, "checksum", checksum="cd1"), Dims(2, 2)).expected_stage() == "checksum_discard"
    assert ground_truth(FaultSpec(0, "checksum", checksum="cd2"), Dims(2, 2)).pattern == "benign"


def test_kernel_and_fmap_ground_truth():
    assert ground_truth(FaultSpec(0, "kernel", j=2), Dims(3, 4)).corrupted_blocks == [(0, 2), (1, 2), (2, 2)]
    assert ground_truth(FaultSpec(0, "fmap", i=1), Dims(3, 1)).pattern == "block"
    # grouped: an fmap element in channel group 1 reaches only kernels 2..3
    t = ground_truth(FaultSpec(0, "fmap", i=0, elem=(3, 0, 0)), Dims(2, 4, G=2, Ch=4))
    assert t.corrupted_blocks == [(0, 2), (0, 3)]


def test_bitflip_flips_the_bit():
    O = np.random.default_rng(1).normal(size=(1, 1, 2, 2)).astype(np.float32)
    O2, _ = inject(O, FaultSpec(0, "output_block", i=0, j=0, elem=(1, 0), magnitude="bitflip", bit=20))
    a = O.view(np.uint32)[0, 0, 1, 0]
    b = O2.view(np.uint32)[0, 0, 1, 0]
    assert a ^ b == 1 << 20
    assert 30 not in safe_bits(np.float32) and 31 in safe_bits(np.float32)
    assert 62 not in safe_bits(np.float64)


def test_spec_validation():
    with pytest.raises(FaultSpecError):
        FaultSpec(0, "bogus")
    with pytest.raises(FaultSpecError):
        FaultSpec(0, "output_row")
    with pytest.raises(FaultSpecError):
        FaultSpec(0, "output_block", i=0, j=0, magnitude="bitflip")
    with pytest.raises(FaultSpecError):
        FaultSpec(0, "checksum", checksum="co9")
    with pytest.raises(FaultSpecError):
        inject(np.zeros((2, 2, 3, 3)), FaultSpec(0, "output_block", i=2, j=0))
    with pytest.raises(FaultSpecError):
        inject(np.zeros((2, 2, 3, 3)), FaultSpec(0, "output_block", i=0, j=0, elem=(3, 0)))


def test_stage_within():
    assert stage_within("coc", "rc") and stage_within("rc", "rc")
    assert not stage_within("fc", "rc")
    assert stage_within("checksum_discard", "checksum_discard")
    assert not stage_within("coc", "checksum_discard")


def test_spec_json_roundtrip():
    spec = FaultSpec(1, "fmap", i=0, elem=(1, 2, 3), magnitude="bitflip", bit=5, seed=2 ** 63)
    assert FaultSpec.from_json(spec.to_json()) == spec


def test_hook_fmap_fault_is_transient():
    D = np.ones((2, 1, 3, 3))
    hook = FaultHook(FaultSpec(0, "fmap", i=1, elem=(0, 1, 1), magnitude="add", value=2.0))
    Dx = hook.conv_input(D)
    assert Dx[1, 0, 1, 1] == 3.0 and D[1, 0, 1, 1] == 1.0
    assert hook.conv_input(D) is D


def test_hook_kernel_fault_is_persistent():
    layer = ConvLayer("k", np.ones((2, 1, 2, 2)), None, ConvParams())
    FaultHook(FaultSpec(0, "kernel", j=1, elem=(0, 0, 0), magnitude="add", value=1.0)).prepare(layer)
    assert not layer.kernel_intact()
    layer.reload()
    assert layer.kernel_intact()


def test_fault_effect_threshold():
    rng = np.random.default_rng(2)
    layer = ConvLayer("e", rng.normal(size=(2, 2, 3, 3)).astype(np.float32), None, ConvParams())
    D = rng.normal(size=(2, 2, 5, 5)).astype(np.float32)
    big = FaultSpec(0, "output_block", i=0, j=1, elem=(1, 1), magnitude="add", value=10.0)
    tiny = FaultSpec(0, "output_block", i=0, j=1, elem=(1, 1), magnitude="add", value=1e-6)
    assert fault_effect(D, layer, big, 1e-4)[0]
    assert not fault_effect(D, layer, tiny, 1e-4)[0]
    cd2 = FaultSpec(0, "checksum", checksum="cd2", elem=(0, 0, 0), magnitude="add", value=10.0)
    assert not fault_effect(D, layer, cd2, 1e-4)[0]


def test_campaign_cycles_layers():
    corpus = campaign(SHAPES, len(SHAPES), seed=1)
    assert [e.spec.layer_index for e in corpus] == [0, 1, 2]
    corpus = campaign(SHAPES, 30, seed=1)
    assert all(e.spec.layer_index == e.run % 3 for e in corpus)


def test_campaign_deterministic_and_weighted():
    a = dumps_corpus(campaign(SHAPES, 200, seed=7))
    assert a == dumps_corpus(campaign(SHAPES, 200, seed=7))
    assert a != dumps_corpus(campaign(SHAPES, 200, seed=8))
    dist = {"output_block": 1.0, "kernel": 0.0, "fmap": 2.0}
    assert all(e.spec.target != "kernel" for e in campaign(SHAPES, 200, dist, seed=7))


def test_campaign_errors():
    with pytest.raises(FaultSpecError):
        campaign([], 5)
    with pytest.raises(FaultSpecError):
        campaign(SHAPES, 5, {"output_block": -1.0})
    with pytest.raises(FaultSpecError):
        campaign(SHAPES, 5, {"output_block": 0.0})


def test_corpus_file_roundtrip(tmp_path):
    corpus = campaign(SHAPES, 50, seed=3)
    p = tmp_path / "c.jsonl"
    write_corpus(p, corpus)
    back = read_corpus(p)
    assert dumps_corpus(back) == p.read_text()
    assert [e.spec for e in back] == [e.spec for e in corpus]
    (tmp_path / "bad.jsonl").write_text("{nope\n")
    with pytest.raises(FaultSpecError):
        read_corpus(tmp_path / "bad.jsonl")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 60))
def test_campaign_specs_fit_their_layer(seed, run):
    e = campaign(SHAPES, run + 1, seed=seed)[run]
    sh = SHAPES[e.spec.layer_index]
    t = e.spec.target
    if t in ("output_block", "output_row", "output_column"):
        arr = np.zeros((sh.N, sh.M, sh.E, sh.E), np.float32)
    elif t == "fmap":
        arr = np.zeros((sh.N, sh.Ch, sh.H, sh.H), np.float32)
    elif t == "kernel":
        arr = np.zeros((sh.M, sh.Ch // sh.G, sh.R, sh.R), np.float32)
    else:
        shape = (sh.Ch, sh.H, sh.H) if e.spec.checksum.startswith("cd") else (sh.Ch, sh.R, sh.R)
        arr = np.zeros(shape)
    inject(arr, e.spec, Dims(sh.N, sh.M, sh.G, sh.Ch))
