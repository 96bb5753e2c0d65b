import itertools

import numpy as np
import pytest

from gdhaslr.classifier import ResidualTable, class_residues, classify, poll, top_fraction
from gdhaslr.dataset import PipelineConfig, build_dictionaries, sample_features
from gdhaslr.imagekit import load_grayscale
from gdhaslr.solver import SolverConfig, SolverResult, build_dictionary


def _result(x, L):
    x, L = np.asarray(x, float), np.asarray(L, float)
    return SolverResult(x, L, np.zeros_like(L), 1, True, 0.0, ())


def _two_class(rng, shape=(4, 3)):
    d = shape[0] * shape[1]
    return build_dictionary([(rng.standard_normal(d), lab) for lab in (1, 1, 2, 2)])


# -- residues ---------------------------------------------------------------

def test_residues_zero_when_L_absorbs_everything(rng):
    D = _two_class(rng)
    y = rng.standard_normal(12)
    r = class_residues(D, y, _result(np.zeros(4), y), (4, 3))
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_residue_single_class_exact_fit(rng):
    D = build_dictionary([(rng.standard_normal(12), "only") for _ in range(3)])
    x = np.array([0.5, -1.0, 2.0])
    r = class_residues(D, D.atoms @ x, _result(x, np.zeros(12)), (4, 3))
    assert r.shape == (1,) and r[0] == pytest.approx(0.0, abs=1e-12)


def test_residues_two_class_toy(rng):
    D = _two_class(rng)
    x = np.array([1.5, -0.7, 0.0, 0.0])
    y = D.atoms @ x
    r = class_residues(D, y, _result(x, np.zeros(12)), (4, 3))
    assert r[0] == pytest.approx(0.0, abs=1e-12)
    assert r[1] == pytest.approx(np.linalg.svd(y.reshape(4, 3, order="F"), compute_uv=False).sum())


def test_residues_uniform_baseline(rng):
    D = _two_class(rng)
    y = rng.standard_normal(12)
    r = class_residues(D, y, _result(np.zeros(4), np.zeros(12)), (4, 3))
    nuc = np.linalg.svd(y.reshape(4, 3, order="F"), compute_uv=False).sum()
    np.testing.assert_allclose(r, nuc)


def test_residues_l2_option(rng):
    D = _two_class(rng)
    y = rng.standard_normal(12)
    r = class_residues(D, y, _result(np.zeros(4), y), (4, 3), norm="l2")
    np.testing.assert_allclose(r, np.linalg.norm(y))
    with pytest.raises(ValueError):
        class_residues(D, y, _result(np.zeros(4), y), (4, 3), norm="fro")


def test_residual_table_validation():
    with pytest.raises(ValueError):
        ResidualTable((1, 2), (np.array([1.0]),))
    with pytest.raises(ValueError):
        ResidualTable((1, 2), (np.array([1.0, -1.0]),))


# -- top fraction -----------------------------------------------------------

def test_top_fraction_counts(rng):
    assert len(top_fraction(rng.uniform(size=100), 0.10)) == 10
    assert len(top_fraction(rng.uniform(size=5), 0.10)) == 1
    for n in range(1, 60):
        for m in (0.01, 0.1, 0.25, 0.33, 1.0):
            assert len(top_fraction(rng.uniform(size=n), m)) == max(1, int(np.ceil(m * n - 1e-9)))


def test_top_fraction_order_and_ties():
    assert top_fraction([3.0, 1.0, 2.0, 0.5], 0.5, ["a", "b", "c", "d"]) == ["d", "b"]
    assert top_fraction(np.ones(20), 0.1, list(range(20, 0, -1))) == [1, 2]


def test_top_fraction_errors():
    with pytest.raises(ValueError):
        top_fraction([], 0.1)
    with pytest.raises(ValueError):
        top_fraction([1.0], 0.0)
    with pytest.raises(ValueError):
        top_fraction([1.0, 2.0], 0.5, ["a"])


# -- polling ----------------------------------------------------------------

UNANIMOUS = [
    [21, 4, 33, 8, 50, 61, 12, 77, 90, 2],
    [9, 21, 4, 15, 70, 33, 81, 46, 23, 5],
    [14, 52, 21, 8, 66, 19, 38, 95, 71, 30],
]
RANK_TIE = [
    [17, 40, 63, 2, 5, 6, 7, 9, 10, 11],
    [44, 17, 40, 12, 13, 14, 15, 16, 18, 19],
    [20, 22, 63, 24, 25, 26, 27, 28, 29, 31],
]


def test_poll_unanimous_class():
    v = poll(UNANIMOUS)
    assert v.identity == 21 and v.frequency == 3 and not v.tie_broken
    assert max(f for c, f in v.frequencies.items() if c != 21) <= 2


def test_poll_tie_resolved_by_average_rank():
    v = poll(RANK_TIE)
    assert v.identity == 17 and v.tie_broken and v.frequency == 2
    assert {c for c, f in v.frequencies.items() if f == 2} == {17, 40, 63}
    assert [v.average_ranks[c] for c in (17, 40, 63)] == [1.5, 2.5, 3.0]


def test_poll_identical_singletons():
    v = poll([["c"], ["c"], ["c"]])
    assert v.identity == "c" and v.frequency == 3 and not v.tie_broken


def test_poll_final_tie_by_class_id():
    v = poll([[5, 3], [3, 5], [9]])
    assert v.identity == 3 and v.tie_broken


def test_poll_order_invariance():
    for lists in (UNANIMOUS, RANK_TIE):
        ref = poll(lists)
        for perm in itertools.permutations(lists):
            assert poll(list(perm)) == ref


def test_poll_label_equivariance(rng):
    ids = sorted({c for lst in RANK_TIE for c in lst})
    for _ in range(10):
        # order-preserving relabeling keeps the final id tie-break consistent
        new = np.sort(rng.choice(10_000, len(ids), replace=False)).tolist()
        mapping = dict(zip(ids, new))
        relabeled = [[mapping[c] for c in lst] for lst in RANK_TIE]
        assert poll(relabeled).identity == mapping[poll(RANK_TIE).identity]


def test_poll_errors():
    with pytest.raises(ValueError):
        poll([])
    with pytest.raises(ValueError):
        poll([[1], []])


# -- end to end -------------------------------------------------------------

@pytest.fixture(scope="module")
def synth_pipeline(synth10):
    _, manifest = synth10
    cfg = PipelineConfig()
    train = [(load_grayscale(e.path, 42, 30), e.label) for e in manifest.split("train")]
    return train, build_dictionaries(train, cfg), cfg


def test_classify_training_image_recovers_label(synth_pipeline):
    train, dicts, cfg = synth_pipeline
    for img, label in train[:4]:
        verdict, diag = classify(dicts, sample_features(img, cfg), cfg.solver, cfg.m_fraction)
        assert verdict.identity == label and verdict.frequency == 3
        idx = diag.table.class_ids.index(label)
        for row in diag.table.residues:
            assert int(np.argmin(row)) == idx
        assert len(diag.results) == 3 and len(diag.top_lists) == 3


def test_classify_label_equivariance(synth_pipeline):
    train, _, cfg = synth_pipeline
    relabel = {lab: f"person-{i:02d}" for i, (_, lab) in enumerate(train)}
    img, label = train[3]
    dicts = build_dictionaries([(im, relabel[lab]) for im, lab in train], cfg)
    verdict, _ = classify(dicts, sample_features(img, cfg), cfg.solver, cfg.m_fraction)
    assert verdict.identity == relabel[label]


def test_classify_one_class(rng):
    d = 12
    D = build_dictionary([(rng.standard_normal(d), "solo")])
    cfg = SolverConfig(image_shape=(4, 3), max_iters=50)
    verdict, diag = classify([D, D, D], [rng.standard_normal(d) for _ in range(3)], cfg)
    assert verdict.identity == "solo" and verdict.frequency == 3


def test_classify_intensity_single_dictionary(synth_pipeline):
    train, _, _ = synth_pipeline
    cfg = PipelineConfig(feature_mode="intensity")
    dicts = build_dictionaries(train, cfg)
    assert len(dicts) == 1
    img, label = train[0]
    verdict, _ = classify(dicts, sample_features(img, cfg), cfg.solver, cfg.m_fraction)
    assert verdict.identity == label and verdict.frequency == 1


def test_classify_rejects_mismatch(rng):
    D1 = build_dictionary([(rng.standard_normal(12), lab) for lab in "ab"])
    D2 = build_dictionary([(rng.standard_normal(12), lab) for lab in "ac"])
    cfg = SolverConfig(image_shape=(4, 3))
    with pytest.raises(ValueError):
        classify([D1, D2], [np.zeros(12)] * 2, cfg)
    with pytest.raises(ValueError):
        classify([D1], [np.zeros(12)] * 2, cfg)
