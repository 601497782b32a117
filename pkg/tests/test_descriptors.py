import numpy as np
import pytest

from rmacplus.descriptors import (Descriptor, L2_NORMALIZED, RAW_MAC,
                                  WHITENED_NORMALIZED, WhiteningModel,
                                  compute_image_descriptors, fit_whitening,
                                  l2_normalize, load_whitening_model, mac_pool,
                                  multires_aggregate, rmac_aggregate,
                                  save_whitening_model, whiten,
                                  whitening_fingerprint)
from rmacplus.errors import DataError
from rmacplus.region_grid import GridSpec, Region
from rmacplus.tensor_store import FeatureMap, ManifestEntry, write_feature_map

from conftest import make_map


def desc(values, state=L2_NORMALIZED):
    return Descriptor(np.asarray(values, dtype=np.float32), state)


# --- mac_pool -----------------------------------------------------------------

def test_mac_pool_hand_example():
    # W=2, H=1, D=2 with cell (x=0): (1,5), cell (x=1): (3,2)
    data = np.array([[[1.0, 5.0], [3.0, 2.0]]], dtype=np.float32)
    fmap = FeatureMap.from_array(data)
    pooled = mac_pool(fmap, Region(0, 0, 2, 1, 0))
    assert pooled.state == RAW_MAC
    assert pooled.values.tolist() == [3.0, 5.0]


def test_mac_pool_singleton_region_is_cell_vector(rng):
    fmap = make_map(5, 4, 3, rng)
    pooled = mac_pool(fmap, Region(2, 1, 1, 1, 0))
    assert np.array_equal(pooled.values, fmap.data[1, 2, :])


def test_mac_pool_constant_map():
    fmap = make_map(6, 6, 4, fill=2.5)
    pooled = mac_pool(fmap, Region(1, 2, 3, 3, 0))
    assert pooled.values.tolist() == [2.5] * 4


def test_mac_pool_out_of_bounds():
    fmap = make_map(4, 4, 2)
    with pytest.raises(ValueError, match="out of bounds"):
        mac_pool(fmap, Region(2, 2, 3, 2, 0))


def test_mac_pool_dominance(rng):
    """Whole-map maxima dominate any sub-region's, channel by channel."""
    fmap = make_map(12, 9, 6, rng)
    full = mac_pool(fmap, Region(0, 0, 12, 9, 0)).values
    for _ in range(20):
        x0, y0 = rng.integers(0, 9), rng.integers(0, 6)
        w, h = rng.integers(1, 12 - x0 + 1), rng.integers(1, 9 - y0 + 1)
        sub = mac_pool(fmap, Region(int(x0), int(y0), int(w), int(h), 0)).values
        assert (full >= sub).all()


# --- l2_normalize ---------------------------------------------------------------

def test_l2_345_triangle():
    normalized = l2_normalize(desc([3.0, 4.0], RAW_MAC))
    assert normalized.state == L2_NORMALIZED
    assert np.allclose(normalized.values, [0.6, 0.8])


def test_l2_idempotent_on_unit_vector():
    unit = l2_normalize(desc([3.0, 4.0], RAW_MAC))
    again = l2_normalize(unit)
    assert np.allclose(again.values, unit.values, atol=1e-7)


def test_l2_zero_vector_flagged():
    z = l2_normalize(desc([0.0, 0.0], RAW_MAC))
    assert z.values.tolist() == [0.0, 0.0]
    assert z.is_zero


def test_l2_scale_invariance(rng):
    v = rng.normal(size=16).astype(np.float32)
    a = l2_normalize(desc(v, RAW_MAC)).values
    b = l2_normalize(desc(3.7 * v, RAW_MAC)).values
    assert np.allclose(a, b, atol=1e-6)


# --- whitening ------------------------------------------------------------------

def axis_points():
    # biased covariance exactly diag(4, 1), mean zero
    return [desc([2.0, 1.0]), desc([2.0, -1.0]), desc([-2.0, 1.0]), desc([-2.0, -1.0])]


def test_fit_whitening_axis_aligned_closed_form():
    model = fit_whitening(axis_points())
    assert model.fitted_on == 4
    # eigenvalues 4 and 1, eigenvectors e1 and e2 with positive signs
    assert np.allclose(model.eigenvalues(), [4.0, 1.0], atol=1e-6)
    assert np.allclose(model.mean, [0.0, 0.0])
    assert np.allclose(model.projection, [[0.5, 0.0], [0.0, 1.0]], atol=1e-4)
    # whitened training covariance is the identity
    whitened = np.stack([model.apply(d.values) for d in axis_points()])
    cov = whitened.T @ whitened / 4
    assert np.abs(cov - np.eye(2)).max() <= 1e-6


def test_whiten_direction_closed_form():
    model = fit_whitening(axis_points())
    out = whiten(desc([2.0, 0.0]), model)
    assert out.state == WHITENED_NORMALIZED
    assert np.allclose(out.values, [1.0, 0.0], atol=1e-6)


def test_whitening_of_white_data_is_near_rotation(rng):
    x = rng.normal(size=(4000, 6))
    x -= x.mean(axis=0)
    model = fit_whitening(x)
    p = model.projection
    assert np.abs(p @ p.T - np.eye(6)).max() < 0.1


def test_rank_zero_training_set_is_safe():
    model = fit_whitening([desc([1.0, 2.0])] * 5)
    assert (model.eigenvalues() < 1e-6).all()
    out = whiten(desc([1.0, 2.0]), model)
    assert np.isfinite(out.values).all()
    assert out.is_zero  # training point sits at the mean


def test_whitening_mean_maps_to_zero():
    model = fit_whitening(axis_points())
    out = whiten(desc(model.mean.astype(np.float32)), model)
    assert out.is_zero


def test_fit_whitening_errors():
    with pytest.raises(ValueError, match="at least 2"):
        fit_whitening([desc([1.0, 2.0])])
    with pytest.raises(ValueError, match="mixed"):
        fit_whitening([desc([1.0, 2.0]), desc([1.0, 2.0, 3.0])])
    with pytest.raises(ValueError, match="dim"):
        whiten(desc([1.0, 2.0, 3.0]), fit_whitening(axis_points()))


def test_whitening_property_identity_covariance(rng):
    """Gaussian training sets whiten to per-entry identity within 1e-3."""
    for dim in (8, 32):
        n = 10 * dim
        scales = rng.uniform(0.5, 3.0, size=dim)
        x = rng.normal(size=(n, dim)) * scales
        model = fit_whitening(x)
        whitened = np.stack([model.apply(v) for v in x])
        cov = whitened.T @ whitened / n
        assert np.abs(cov - np.eye(dim)).max() <= 1e-3


def test_fit_whitening_deterministic(rng):
    x = rng.normal(size=(100, 8))
    a = fit_whitening(x)
    b = fit_whitening(x.copy())
    assert np.array_equal(a.projection, b.projection)
    assert np.array_equal(a.mean, b.mean)


def test_whitening_model_round_trip(tmp_path, rng):
    x = rng.normal(size=(50, 5))
    model = fit_whitening(x)
    path = tmp_path / "model.whtn"
    save_whitening_model(model, path)
    loaded = load_whitening_model(path)
    assert np.array_equal(loaded.mean, model.mean)
    assert np.array_equal(loaded.projection, model.projection)
    assert loaded.epsilon == model.epsilon
    # fingerprint is stable
    assert whitening_fingerprint(path) == whitening_fingerprint(path)
    save_whitening_model(model, tmp_path / "again.whtn")
    assert (tmp_path / "again.whtn").read_bytes() == path.read_bytes()


def test_whitening_model_bad_magic(tmp_path):
    path = tmp_path / "model.whtn"
    save_whitening_model(WhiteningModel.identity(3), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        load_whitening_model(path)


# --- aggregation -----------------------------------------------------------------

def test_rmac_aggregate_single_is_identity():
    d = l2_normalize(desc([1.0, 2.0, 2.0], RAW_MAC))
    out = rmac_aggregate([d])
    assert np.allclose(out.values, d.values, atol=1e-7)


def test_rmac_aggregate_collinear_inputs():
    d = l2_normalize(desc([0.0, 1.0], RAW_MAC))
    out = rmac_aggregate([d, d])
    assert np.allclose(out.values, d.values, atol=1e-7)


def test_rmac_aggregate_orthogonal_pair():
    out = rmac_aggregate([desc([1.0, 0.0]), desc([0.0, 1.0])])
    assert np.allclose(out.values, [1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_rmac_aggregate_order_invariant(rng):
    ds = [l2_normalize(desc(rng.normal(size=8), RAW_MAC)) for _ in range(10)]
    a = rmac_aggregate(ds).values
    b = rmac_aggregate(list(reversed(ds))).values
    assert np.allclose(a, b, atol=1e-7)


def test_rmac_aggregate_duplicate_region_neutral():
    ds = [desc([1.0, 0.0]), desc([0.0, 1.0])]
    base = rmac_aggregate(ds).values
    doubled = rmac_aggregate(ds + [desc([1.0, 0.0]), desc([0.0, 1.0])]).values
    assert np.allclose(base, doubled, atol=1e-7)


def test_rmac_aggregate_errors():
    with pytest.raises(ValueError, match="empty"):
        rmac_aggregate([])
    with pytest.raises(ValueError, match="mixed"):
        rmac_aggregate([desc([1.0, 0.0]), desc([1.0, 0.0, 0.0])])


def test_multires_aggregate_identical_inputs():
    d = l2_normalize(desc([2.0, 1.0], RAW_MAC))
    out = multires_aggregate([d, d, d])
    assert np.allclose(out.values, d.values, atol=1e-7)


def test_multires_aggregate_commutative():
    ds = [desc([1.0, 0.0, 0.0]), desc([0.0, 1.0, 0.0]), desc([0.0, 0.0, 1.0])]
    a = multires_aggregate(ds).values
    b = multires_aggregate(ds[::-1]).values
    assert np.allclose(a, b)
    assert np.allclose(a, np.full(3, 1 / np.sqrt(3)))


def test_multires_aggregate_count_enforced():
    d = desc([1.0, 0.0])
    with pytest.raises(ValueError, match="expected 3"):
        multires_aggregate([d], multiresolution=True)
    with pytest.raises(ValueError, match="expected 1"):
        multires_aggregate([d, d, d], multiresolution=False)
    assert multires_aggregate([d], multiresolution=False).values.tolist() == [1.0, 0.0]


# --- per-image pipeline -------------------------------------------------------

def write_image(tmp_path, rng, image_id, tags, width=20, height=16, channels=6):
    entries = []
    for tag in tags:
        scale = {"base": 1.0, "up25": 1.25, "down25": 0.75}[tag]
        w, h = round(width * scale), round(height * scale)
        fmap = make_map(w, h, channels, rng)
        rel = f"{image_id}.{tag}.fmap"
        write_feature_map(fmap, tmp_path / rel)
        entries.append(ManifestEntry(image_id, tag, rel, w, h, channels))
    return entries


def test_single_resolution_yields_15_regions(tmp_path, rng):
    entries = write_image(tmp_path, rng, "img", ["base"])
    model = WhiteningModel.identity(6)
    out = compute_image_descriptors(entries, tmp_path, model, GridSpec())
    assert len(out.regions) == 15
    assert out.resolutions == 1
    assert abs(np.linalg.norm(out.rmac.values) - 1) <= 1e-5
    assert all(d.state == "whitened_normalized" for d in out.regions)


def test_multi_resolution_yields_45_regions(tmp_path, rng):
    entries = write_image(tmp_path, rng, "img", ["base", "up25", "down25"])
    model = WhiteningModel.identity(6)
    out = compute_image_descriptors(entries, tmp_path, model, GridSpec())
    assert len(out.regions) == 45
    assert out.resolutions == 3


def test_full_image_bbox_crop_is_identity(tmp_path, rng):
    from rmacplus.descriptors import QueryCrop
    entries = write_image(tmp_path, rng, "img", ["base"])
    model = WhiteningModel.identity(6)
    plain = compute_image_descriptors(entries, tmp_path, model, GridSpec())
    cropped = compute_image_descriptors(
        entries, tmp_path, model, GridSpec(),
        query_crop=QueryCrop(bbox=(0, 0, 640, 512), image_size=(640, 512)))
    assert np.array_equal(plain.rmac.values, cropped.rmac.values)


def test_bbox_crop_changes_descriptor(tmp_path, rng):
    from rmacplus.descriptors import QueryCrop
    entries = write_image(tmp_path, rng, "img", ["base"])
    model = WhiteningModel.identity(6)
    plain = compute_image_descriptors(entries, tmp_path, model, GridSpec())
    cropped = compute_image_descriptors(
        entries, tmp_path, model, GridSpec(),
        query_crop=QueryCrop(bbox=(0, 0, 320, 512), image_size=(640, 512)))
    assert not np.array_equal(plain.rmac.values, cropped.rmac.values)


def test_missing_resolution_rejected(tmp_path, rng):
    entries = write_image(tmp_path, rng, "img", ["base", "up25"])
    with pytest.raises(DataError, match="resolution tags"):
        compute_image_descriptors(entries, tmp_path,
                                  WhiteningModel.identity(6), GridSpec())


def test_manifest_dims_must_match_file(tmp_path, rng):
    entries = write_image(tmp_path, rng, "img", ["base"])
    wrong = [ManifestEntry("img", "base", entries[0].path, 99, 16, 6)]
    with pytest.raises(DataError, match="manifest declares"):
        compute_image_descriptors(wrong, tmp_path,
                                  WhiteningModel.identity(6), GridSpec())


def test_pipeline_deterministic(tmp_path, rng):
    entries = write_image(tmp_path, rng, "img", ["base", "up25", "down25"])
    x = rng.normal(size=(64, 6))
    model = fit_whitening(x)
    a = compute_image_descriptors(entries, tmp_path, model, GridSpec())
    b = compute_image_descriptors(entries, tmp_path, model, GridSpec())
    assert np.array_equal(a.rmac.values, b.rmac.values)
    for da, db in zip(a.regions, b.regions):
        assert np.array_equal(da.values, db.values)


def test_zero_region_kept(tmp_path):
    fmap = make_map(8, 8, 4, fill=0.0)
    write_feature_map(fmap, tmp_path / "z.fmap")
    entries = [ManifestEntry("z", "base", "z.fmap", 8, 8, 4)]
    out = compute_image_descriptors(entries, tmp_path,
                                    WhiteningModel.identity(4), GridSpec())
    assert len(out.regions) > 0
    assert all(d.is_zero for d in out.regions)
    assert out.rmac.is_zero
