import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multitask_affect.dataset import (
    HEADER,
    AnnotationRecord,
    batches,
    curate,
    generate_synthetic,
    load_dataset,
    parse_annotations,
    save_dataset,
    write_annotations,
)
from multitask_affect.errors import ContractError, DataError

from conftest import fuzz_record, oracle_reason

GOOD = AnnotationRecord("a", 0.2, -0.3, 4, (0, 1) * 6)


def _csv(tmp_path, rows):
    path = tmp_path / "ann.csv"
    path.write_text("\n".join([",".join(HEADER)] + rows) + "\n", encoding="utf-8")
    return path


def test_parse_one_row(tmp_path):
    recs = parse_annotations(_csv(tmp_path, ["f1,0.2,-0.3,4," + ",".join(["0", "1"] * 6)]))
    assert len(recs) == 1
    assert recs[0].frame_id == "f1" and recs[0].valence == 0.2 and recs[0].au == (0, 1) * 6 and recs[0].expression == 4


def test_parse_keeps_invalid_marker(tmp_path):
    recs = parse_annotations(_csv(tmp_path, ["f1,-5,0.1,0," + ",".join(["0"] * 12)]))
    assert recs[0].valence == -5.0


def test_parse_wrong_arity_reports_line(tmp_path):
    rows = ["ok,0,0,0," + ",".join(["0"] * 12), "bad,0,0,0," + ",".join(["0"] * 11)]
    with pytest.raises(DataError, match="line 3"):
        parse_annotations(_csv(tmp_path, rows))


def test_parse_non_numeric(tmp_path):
    with pytest.raises(DataError, match="line 2"):
        parse_annotations(_csv(tmp_path, ["x,abc,0,0," + ",".join(["0"] * 12)]))


def test_parse_bad_header(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("id,v\n")
    with pytest.raises(DataError):
        parse_annotations(path)


def test_write_parse_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    recs = [fuzz_record(rng, i) for i in range(50)]
    write_annotations(recs, tmp_path / "x.csv")
    assert parse_annotations(tmp_path / "x.csv") == recs


def test_curate_examples():
    bad_a = AnnotationRecord("b", 0.2, -5.0, 4, (0,) * 12)
    bad_au = AnnotationRecord("c", 0.2, 0.1, 4, (0, 0, 0, 0, -1) + (0,) * 7)
    kept, rep = curate([GOOD, bad_a, bad_au])
    assert kept == [GOOD]
    assert rep.dropped_by_reason == {"invalid_va": 1, "invalid_expr": 0, "invalid_au": 1}


def test_curate_planted_ten():
    recs = [AnnotationRecord(f"r{i}", 0.0, 0.0, i % 8, (0,) * 12) for i in range(10)]
    recs[2] = AnnotationRecord("r2", -5.0, 0.0, 0, (0,) * 12)
    recs[5] = AnnotationRecord("r5", 0.0, 0.0, -1, (0,) * 12)
    recs[7] = AnnotationRecord("r7", 0.0, 0.0, 1, (1,) * 11 + (-1,))
    kept, rep = curate(recs)
    assert rep.kept == 7 and rep.dropped == 3 and rep.total_in == 10
    assert rep.dropped_by_reason == {"invalid_va": 1, "invalid_expr": 1, "invalid_au": 1}
    assert [r.frame_id for r in kept] == [f"r{i}" for i in range(10) if i not in (2, 5, 7)]


def test_curate_first_reason_wins():
    rec = AnnotationRecord("x", -5.0, 0.0, -1, (-1,) * 12)
    assert curate([rec])[1].dropped_by_reason["invalid_va"] == 1
    rec = AnnotationRecord("x", 0.0, 0.0, -1, (-1,) * 12)
    assert curate([rec])[1].dropped_by_reason["invalid_expr"] == 1


def test_curate_range_override():
    rec = AnnotationRecord("x", -0.5, 0.5, 0, (0,) * 12)
    assert curate([rec], va_range=(0.0, 1.0))[1].dropped == 1


@given(st.integers(0, 100_000), st.integers(0, 60))
@settings(max_examples=50)
def test_curate_matches_oracle_and_is_idempotent(seed, n):
    rng = np.random.default_rng(seed)
    recs = [fuzz_record(rng, i) for i in range(n)]
    kept, rep = curate(recs)
    assert kept == [r for r in recs if oracle_reason(r) is None]
    counts = Counter(oracle_reason(r) for r in recs)
    assert rep.dropped_by_reason == {k: counts.get(k, 0) for k in ("invalid_va", "invalid_expr", "invalid_au")}
    assert rep.kept + rep.dropped == rep.total_in == n
    assert all(any(k is r for r in recs) for k in kept)
    again, rep2 = curate(kept)
    assert again == kept and rep2.dropped == 0


def test_curation_report_json():
    _, rep = curate([GOOD])
    assert json.loads(rep.to_json())["kept"] == 1


def test_synthetic_deterministic():
    a, b = generate_synthetic(16, seed=3), generate_synthetic(16, seed=3)
    assert all(x.record == y.record and x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))
    c = generate_synthetic(16, seed=4)
    assert any(x.image.tobytes() != y.image.tobytes() for x, y in zip(a, c))


def test_synthetic_coverage():
    samples = generate_synthetic(64, seed=0)
    counts = Counter(s.record.expression for s in samples)
    assert set(counts) == set(range(8)) and min(counts.values()) >= 2
    au = np.array([s.record.au for s in samples])
    assert np.all(au.min(axis=0) == 0) and np.all(au.max(axis=0) == 1)
    kept, rep = curate([s.record for s in samples])
    assert rep.kept == 64
    img = samples[0].image
    assert img.shape == (3, 32, 32) and img.min() >= 0 and img.max() <= 1


def test_synthetic_rejects_n_zero():
    with pytest.raises(ContractError):
        generate_synthetic(0)


def test_save_load_round_trip(tmp_path):
    samples = generate_synthetic(6, seed=2, image_size=16)
    save_dataset(samples, tmp_path)
    loaded, rep = load_dataset(tmp_path)
    assert rep.kept == 6
    for s, t in zip(samples, loaded):
        assert s.record == t.record
        assert np.array_equal(s.image, t.image)


def test_load_missing_image(tmp_path):
    samples = generate_synthetic(2, seed=2, image_size=8)
    save_dataset(samples, tmp_path)
    (tmp_path / "images" / f"{samples[1].record.frame_id}.png").unlink()
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_load_drops_invalid_rows(tmp_path):
    samples = generate_synthetic(3, seed=2, image_size=8)
    save_dataset(samples, tmp_path)
    recs = [s.record for s in samples]
    recs[1] = AnnotationRecord(recs[1].frame_id, -5.0, 0.0, 0, (0,) * 12)
    write_annotations(recs, tmp_path / "annotations.csv")
    loaded, rep = load_dataset(tmp_path)
    assert len(loaded) == 2 and rep.dropped_by_reason["invalid_va"] == 1


def _sizes(n, b, **kw):
    return [len(t) for _, t in batches(generate_synthetic(n, image_size=8), b, **kw)]


def test_batch_sizes():
    assert _sizes(10, 4) == [4, 4, 2]
    assert _sizes(9, 4) == [4, 4]


def test_batches_unshuffled_order():
    samples = generate_synthetic(6, image_size=8)
    ids = [i for imgs, t in batches(samples, 2, shuffle=False) for i in t.expr]
    assert ids == [s.record.expression for s in samples]
    imgs, _ = next(batches(samples, 2, shuffle=False))
    assert np.array_equal(imgs.data[1], samples[1].image)


def test_batches_seeded_shuffle():
    samples = generate_synthetic(12, image_size=8)
    a = [t.va.tobytes() for _, t in batches(samples, 4, seed=5)]
    b = [t.va.tobytes() for _, t in batches(samples, 4, seed=5)]
    c = [t.va.tobytes() for _, t in batches(samples, 4, seed=6)]
    assert a == b and a != c


def test_batches_errors():
    with pytest.raises(ContractError):
        list(batches([], 4))
    with pytest.raises(ContractError):
        list(batches(generate_synthetic(4, image_size=8), 1))
