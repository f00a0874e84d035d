import numpy as np
import pytest

from uqagg import (
    FULL_SET,
    FeatureSetSpec,
    INTENSITY_SET,
    SPATIAL_SET,
    compute_features,
    fit_meta,
    parse_strategy,
    parse_strategy_list,
    save_model,
    validate_map,
)
from uqagg import aqa, ata, avg, bca, eds, ent, mor, plm, qfr
from uqagg.core import SegmentationMask
from uqagg.errors import (
    DuplicateStrategy,
    InvalidParam,
    InvalidThreshold,
    MaskRequired,
    UnknownStrategy,
)


def test_default_sets():
    assert len(INTENSITY_SET) == 13
    assert len(SPATIAL_SET) == 3
    assert len(FULL_SET) == 16
    assert len(set(FULL_SET)) == 16
    for token in FULL_SET:
        assert parse_strategy(token).key == token


def test_canonicalization():
    assert parse_strategy("ata:.5").key == "ata:0.5"
    assert parse_strategy("ata:0.50").key == "ata:0.5"
    assert parse_strategy("plm:020").key == "plm:20"
    assert parse_strategy("aqa:0.75").key == "aqa:0.75"
    assert parse_strategy(" avg ").key == "avg"
    # parameterless spellings of the defaults collapse to the bare name
    assert parse_strategy("eds:0.2").key == "eds"
    assert parse_strategy("ent:4").key == "ent"
    assert parse_strategy("eds:0.3").key == "eds:0.3"
    assert parse_strategy("ent:8").key == "ent:8"


def test_parse_rejections():
    for bad in ("nope", "plm", "ata", "aqa", "gmm", ""):
        with pytest.raises((UnknownStrategy, InvalidParam)):
            parse_strategy(bad)
    with pytest.raises(InvalidParam):
        parse_strategy("avg:3")
    with pytest.raises(InvalidParam):
        parse_strategy("plm:two")
    with pytest.raises(InvalidParam):
        parse_strategy("plm:0")
    with pytest.raises(InvalidThreshold):
        parse_strategy("ata:1.5")
    with pytest.raises(InvalidParam):
        parse_strategy("ent:1")


def test_parse_list_and_duplicates():
    keys = [s.key for s in parse_strategy_list("avg, plm:20 ,mor")]
    assert keys == ["avg", "plm:20", "mor"]
    with pytest.raises(DuplicateStrategy):
        parse_strategy_list("avg,avg")
    # duplicates after canonicalization count too
    with pytest.raises(DuplicateStrategy):
        parse_strategy_list("eds,eds:0.2")
    with pytest.raises(UnknownStrategy):
        parse_strategy_list("")
    keys = [s.key for s in parse_strategy_list(["mor", "ent:8"])]
    assert keys == ["mor", "ent:8"]


def test_strategies_dispatch_to_the_plain_functions():
    rng = np.random.default_rng(0)
    u = validate_map(rng.random((12, 12)))
    mask = SegmentationMask(rng.integers(0, 3, size=(12, 12)))
    pairs = {
        "avg": avg(u),
        "plm:5": plm(u, 5),
        "ata:0.4": ata(u, 0.4),
        "aqa:0.75": aqa(u, 0.75),
        "mor": mor(u),
        "eds:0.3": eds(u, 0.3),
        "ent:8": ent(u, 8),
        "bca": bca(u, mask),
        "qfr": qfr(u, mask),
    }
    for token, want in pairs.items():
        strat = parse_strategy(token)
        assert strat(u, mask) == want


def test_mask_requirement_enforced():
    u = validate_map(np.full((4, 4), 0.5))
    strat = parse_strategy("bca")
    assert strat.requires_mask
    with pytest.raises(MaskRequired):
        strat(u)
    assert not parse_strategy("avg").requires_mask


def test_compute_features_shape_and_order():
    rng = np.random.default_rng(1)
    maps = [rng.random((8, 8)) for _ in range(5)]
    strategies = parse_strategy_list("ent,avg,mor")
    fm = compute_features(maps, strategies)
    assert fm.names == ("ent", "avg", "mor")
    assert fm.values.shape == (5, 3)
    np.testing.assert_allclose(fm.column("avg"), [float(np.mean(m)) for m in maps])


def test_compute_features_mask_policy():
    maps = [np.full((4, 4), 0.5)]
    strategies = parse_strategy_list("avg,ica")
    with pytest.raises(MaskRequired) as err:
        compute_features(maps, strategies)
    assert "ica" in str(err.value)
    masks = [SegmentationMask(np.ones((4, 4), dtype=int))]
    fm = compute_features(maps, strategies, masks)
    assert fm.values.shape == (1, 2)
    with pytest.raises(InvalidParam):
        compute_features(maps, strategies, masks * 2)


def test_gmm_strategy_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    maps = [np.clip(rng.normal(0.5, 0.1, (16, 16)), 0, 1) for _ in range(30)]
    strategies = parse_strategy_list("avg,mor,ent")
    fm = compute_features(maps, strategies)
    model = fit_meta(fm, FeatureSetSpec.custom(["avg", "mor", "ent"]), k_max=2, seed=0)
    path = tmp_path / "model.json"
    save_model(model, path)
    strat = parse_strategy(f"gmm:{path}")
    assert strat.key == f"gmm:{path}"
    assert not strat.requires_mask
    from uqagg import meta_score

    u = validate_map(maps[0])
    want = meta_score(model, fm.row(0))
    assert strat(u) == pytest.approx(want, rel=1e-12)


def test_gmm_strategy_propagates_mask_need(tmp_path):
    rng = np.random.default_rng(6)
    maps = [np.clip(rng.normal(0.5, 0.1, (16, 16)), 0, 1) for _ in range(20)]
    masks = [SegmentationMask(np.ones((16, 16), dtype=int)) for _ in range(20)]
    strategies = parse_strategy_list("avg,ica")
    fm = compute_features(maps, strategies, masks)
    model = fit_meta(fm, FeatureSetSpec.custom(["avg", "ica"]), k_max=2, seed=0)
    path = tmp_path / "model.json"
    save_model(model, path)
    strat = parse_strategy(f"gmm:{path}")
    assert strat.requires_mask
    with pytest.raises(MaskRequired):
        strat(validate_map(maps[0]))
    val = strat(validate_map(maps[0]), masks[0])
    assert np.isfinite(val)
