import numpy as np
import pytest

from rmacplus.descriptors import Descriptor, ImageDescriptors, WHITENED_NORMALIZED
from rmacplus.errors import DataError
from rmacplus.retrieval import (DB_REGION_QE, RMAC_QE, GalleryIndex, RankedList,
                                build_index, expand_query, load_index,
                                rank_db_regions, rank_plain, read_ranked_file,
                                save_index, write_ranked_file)


def unit(values):
    v = np.asarray(values, dtype=np.float64)
    n = np.linalg.norm(v)
    return Descriptor((v / n if n else v).astype(np.float32), WHITENED_NORMALIZED)


def random_gallery(rng, n_images, dim, regions_per_image):
    items = []
    for i in range(n_images):
        rmac = unit(rng.normal(size=dim))
        regions = tuple(unit(rng.normal(size=dim)) for _ in range(regions_per_image))
        items.append(ImageDescriptors(image_id=f"img{i:03d}", rmac=rmac,
                                      regions=regions, resolutions=1))
    return items


def build(rng, n_images=8, dim=8, regions_per_image=15):
    return build_index(random_gallery(rng, n_images, dim, regions_per_image),
                       multiresolution=False)


# --- independent oracles: plain python double loops --------------------------

def oracle_rank_plain(query, index):
    q = query.values.astype(np.float64)
    scored = []
    for i, image_id in enumerate(index.image_ids):
        row = index.rmac_matrix[i].astype(np.float64)
        d2 = float(np.sum((q - row) ** 2))
        scored.append((d2, image_id))
    scored.sort()
    return [(image_id, np.sqrt(d2)) for d2, image_id in scored]


def oracle_rank_db_regions(query, index):
    q = query.values.astype(np.float64)
    scored = []
    for i, image_id in enumerate(index.image_ids):
        best_d2, best_row = np.inf, None
        for row in range(int(index.offsets[i]), int(index.offsets[i + 1])):
            vec = index.region_matrix[row].astype(np.float64)
            d2 = float(np.sum((q - vec) ** 2))
            if d2 < best_d2:
                best_d2, best_row = d2, row
        scored.append((best_d2, image_id, best_row))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(image_id, np.sqrt(d2), row) for d2, image_id, row in scored]


# --- build_index ---------------------------------------------------------------

def test_build_index_offsets(rng):
    items = random_gallery(rng, 2, 8, 15)
    index = build_index(items, multiresolution=False)
    assert index.region_matrix.shape == (30, 8)
    assert index.offsets.tolist() == [0, 15, 30]


def test_build_index_empty_gallery(rng):
    with pytest.raises(DataError, match="empty"):
        build_index([], multiresolution=False)


def test_build_index_mixed_resolution_mode(rng):
    items = random_gallery(rng, 2, 8, 15)
    items[1] = ImageDescriptors(image_id="img001", rmac=items[1].rmac,
                                regions=items[1].regions, resolutions=3)
    with pytest.raises(DataError, match="uniform"):
        build_index(items, multiresolution=False)


def test_build_index_duplicate_ids(rng):
    items = random_gallery(rng, 2, 8, 15)
    items[1] = ImageDescriptors(image_id="img000", rmac=items[1].rmac,
                                regions=items[1].regions, resolutions=1)
    with pytest.raises(DataError, match="duplicate"):
        build_index(items, multiresolution=False)


def test_build_index_rejects_unnormalized(rng):
    items = random_gallery(rng, 2, 8, 15)
    bad = Descriptor(np.full(8, 0.5, dtype=np.float32), WHITENED_NORMALIZED)
    items[0] = ImageDescriptors(image_id="img000", rmac=bad,
                                regions=items[0].regions, resolutions=1)
    with pytest.raises(DataError, match="unit-norm"):
        build_index(items, multiresolution=False)


# --- ranking --------------------------------------------------------------------

def test_rank_plain_self_match(rng):
    index = build(rng)
    query = Descriptor(index.rmac_matrix[3].copy(), WHITENED_NORMALIZED)
    ranked = rank_plain(query, index)
    assert ranked.entries[0].image_id == "img003"
    assert ranked.entries[0].distance == 0.0


def test_rank_plain_monotone_angles():
    ten_degrees = unit([np.cos(np.radians(10)), np.sin(np.radians(10))])
    items = [
        ImageDescriptors("near", ten_degrees, (ten_degrees,), 1),
        ImageDescriptors("orthogonal", unit([0.0, 1.0]), (unit([0.0, 1.0]),), 1),
    ]
    index = build_index(items, multiresolution=False)
    ranked = rank_plain(unit([1.0, 0.0]), index)
    assert ranked.image_order() == ["near", "orthogonal"]


def test_rank_plain_matches_oracle(rng):
    for _ in range(5):
        index = build(rng, n_images=30, dim=12)
        query = unit(rng.normal(size=12))
        ranked = rank_plain(query, index)
        expected = oracle_rank_plain(query, index)
        assert [e.image_id for e in ranked.entries] == [i for i, _ in expected]
        assert np.allclose([e.distance for e in ranked.entries],
                           [d for _, d in expected], rtol=0, atol=0)


def test_rank_db_regions_min_semantics(rng):
    items = random_gallery(rng, 4, 8, 15)
    query = unit(rng.normal(size=8))
    # plant the query itself as one region of img002
    regions = list(items[2].regions)
    regions[7] = Descriptor(query.values.copy(), WHITENED_NORMALIZED)
    items[2] = ImageDescriptors("img002", items[2].rmac, tuple(regions), 1)
    index = build_index(items, multiresolution=False)
    ranked = rank_db_regions(query, index)
    assert ranked.entries[0].image_id == "img002"
    assert ranked.entries[0].distance == 0.0
    assert ranked.entries[0].best_region_row == 2 * 15 + 7


def test_rank_db_regions_matches_oracle(rng):
    for regions_per_image in (15, 45):
        index = build(rng, n_images=20, dim=10,
                      regions_per_image=regions_per_image)
        query = unit(rng.normal(size=10))
        ranked = rank_db_regions(query, index)
        expected = oracle_rank_db_regions(query, index)
        assert [(e.image_id, e.best_region_row) for e in ranked.entries] == \
            [(i, row) for i, _, row in expected]


def test_rank_db_regions_single_image(rng):
    index = build(rng, n_images=1)
    query = unit(rng.normal(size=8))
    ranked = rank_db_regions(query, index)
    assert len(ranked.entries) == 1
    expected = oracle_rank_db_regions(query, index)[0]
    assert ranked.entries[0].distance == pytest.approx(expected[1], abs=0)


def test_tie_break_lexicographic(rng):
    shared = unit(rng.normal(size=8))
    items = [ImageDescriptors(name, shared, (shared,), 1)
             for name in ("zebra", "alpha", "mango")]
    index = build_index(items, multiresolution=False)
    query = unit(rng.normal(size=8))
    assert rank_plain(query, index).image_order() == ["alpha", "mango", "zebra"]
    assert rank_db_regions(query, index).image_order() == ["alpha", "mango", "zebra"]


def test_min_dominance_and_monotonicity(rng):
    items = random_gallery(rng, 6, 8, 10)
    index = build_index(items, multiresolution=False)
    query = unit(rng.normal(size=8))
    ranked = {e.image_id: e.distance for e in rank_db_regions(query, index).entries}
    q = query.values.astype(np.float64)
    for i, image_id in enumerate(index.image_ids):
        for row in range(int(index.offsets[i]), int(index.offsets[i + 1])):
            d = np.sqrt(np.sum((q - index.region_matrix[row].astype(np.float64)) ** 2))
            assert ranked[image_id] <= d + 1e-12
    # adding a region can only lower (or keep) the image's score
    extra = random_gallery(rng, 6, 8, 11)
    items2 = [ImageDescriptors(a.image_id, a.rmac, a.regions + (b.regions[-1],), 1)
              for a, b in zip(items, extra)]
    index2 = build_index(items2, multiresolution=False)
    ranked2 = {e.image_id: e.distance
               for e in rank_db_regions(query, index2).entries}
    for image_id in ranked:
        assert ranked2[image_id] <= ranked[image_id] + 1e-12


def test_dimension_mismatch_rejected(rng):
    index = build(rng, dim=8)
    with pytest.raises(ValueError, match="dim"):
        rank_plain(unit(np.ones(9)), index)


# --- query expansion ------------------------------------------------------------

def test_qe_idempotent_on_perfect_match(rng):
    query = unit(rng.normal(size=8))
    items = [ImageDescriptors(f"img{i}", Descriptor(query.values, WHITENED_NORMALIZED),
                              (Descriptor(query.values, WHITENED_NORMALIZED),), 1)
             for i in range(3)]
    index = build_index(items, multiresolution=False)
    ranked = rank_plain(query, index)
    expanded = expand_query(query, ranked, index, k=3, variant=RMAC_QE)
    assert np.allclose(expanded.values, query.values, atol=1e-6)


def test_qe_arithmetic_two_vectors():
    e1, e2 = unit([1.0, 0.0]), unit([0.0, 1.0])
    items = [ImageDescriptors("a", e1, (e1,), 1), ImageDescriptors("b", e2, (e2,), 1)]
    index = build_index(items, multiresolution=False)
    ranked = rank_plain(e1, index)
    expanded = expand_query(e1, ranked, index, k=2, variant=RMAC_QE)
    expected = np.array([2.0, 1.0]) / np.sqrt(5.0)
    assert np.allclose(expanded.values, expected, atol=1e-6)


def test_qe_k_clamped_with_warning(rng):
    index = build(rng, n_images=3)
    query = unit(rng.normal(size=8))
    ranked = rank_plain(query, index)
    with pytest.warns(UserWarning, match="clamp"):
        expanded = expand_query(query, ranked, index, k=50, variant=RMAC_QE)
    assert abs(np.linalg.norm(expanded.values) - 1) < 1e-5


def test_qe_db_region_variant_uses_best_regions(rng):
    items = random_gallery(rng, 4, 8, 5)
    index = build_index(items, multiresolution=False)
    query = unit(rng.normal(size=8))
    ranked = rank_db_regions(query, index)
    expanded = expand_query(query, ranked, index, k=2, variant=DB_REGION_QE)
    total = query.values.astype(np.float64)
    for entry in ranked.entries[:2]:
        total += index.region_matrix[entry.best_region_row]
    assert np.allclose(expanded.values, total / np.linalg.norm(total), atol=1e-6)


def test_qe_db_region_variant_from_plain_ranking(rng):
    """Without recorded best rows, the expansion recomputes them."""
    items = random_gallery(rng, 4, 8, 5)
    index = build_index(items, multiresolution=False)
    query = unit(rng.normal(size=8))
    via_plain = expand_query(query, rank_plain(query, index), index, k=2,
                             variant=DB_REGION_QE)
    assert abs(np.linalg.norm(via_plain.values) - 1) < 1e-5


def test_qe_global_regions_variant(rng):
    items = random_gallery(rng, 4, 8, 5)
    index = build_index(items, multiresolution=False)
    query = unit(rng.normal(size=8))
    ranked = rank_db_regions(query, index)
    expanded = expand_query(query, ranked, index, k=3, variant=DB_REGION_QE,
                            global_regions=True)
    q = query.values.astype(np.float64)
    d2 = np.sum((index.region_matrix.astype(np.float64) - q) ** 2, axis=1)
    total = q.copy()
    for row in np.argsort(d2, kind="stable")[:3]:
        total += index.region_matrix[row]
    assert np.allclose(expanded.values, total / np.linalg.norm(total), atol=1e-6)


def test_qe_invalid_arguments(rng):
    index = build(rng)
    query = unit(rng.normal(size=8))
    ranked = rank_plain(query, index)
    with pytest.raises(ValueError, match="k must be"):
        expand_query(query, ranked, index, k=0, variant=RMAC_QE)
    with pytest.raises(ValueError, match="variant"):
        expand_query(query, ranked, index, k=1, variant="nope")


# --- persistence -----------------------------------------------------------------

def test_index_round_trip(tmp_path, rng):
    index = build(rng, n_images=3)
    path = tmp_path / "g.ridx"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded.image_ids == index.image_ids
    assert np.array_equal(loaded.rmac_matrix, index.rmac_matrix)
    assert np.array_equal(loaded.region_matrix, index.region_matrix)
    assert np.array_equal(loaded.offsets, index.offsets)
    assert loaded.multiresolution == index.multiresolution
    assert loaded.detector == index.detector
    assert loaded.whitening_fingerprint == index.whitening_fingerprint


def test_index_save_deterministic(tmp_path, rng):
    index = build(rng, n_images=3)
    save_index(index, tmp_path / "a.ridx")
    save_index(index, tmp_path / "b.ridx")
    assert (tmp_path / "a.ridx").read_bytes() == (tmp_path / "b.ridx").read_bytes()


def test_index_bad_magic(tmp_path, rng):
    path = tmp_path / "g.ridx"
    save_index(build(rng), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"JUNK"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        load_index(path)


def test_index_truncation(tmp_path, rng):
    path = tmp_path / "g.ridx"
    save_index(build(rng), path)
    path.write_bytes(path.read_bytes()[:-40])
    with pytest.raises(DataError, match="truncated"):
        load_index(path)


def test_load_then_rank_identical(tmp_path, rng):
    index = build(rng, n_images=10)
    query = unit(rng.normal(size=8))
    before = rank_db_regions(query, index)
    save_index(index, tmp_path / "g.ridx")
    after = rank_db_regions(query, load_index(tmp_path / "g.ridx"))
    assert before.entries == after.entries


def test_ranked_file_round_trip(tmp_path, rng):
    index = build(rng, n_images=5)
    query = unit(rng.normal(size=8))
    ranked = rank_plain(query, index, "q1")
    path = tmp_path / "q1.ranked.txt"
    write_ranked_file(ranked, path)
    first = path.read_text().splitlines()[0].split("\t")
    assert first[0] == "1" and first[1] == ranked.entries[0].image_id
    loaded = read_ranked_file(path, "q1")
    assert loaded.image_order() == ranked.image_order()
    assert loaded.entries[0].distance == pytest.approx(ranked.entries[0].distance,
                                                       abs=1e-8)
