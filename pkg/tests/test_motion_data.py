import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import contiguous_windows
from posediff.errors import ConfigError, ParseError, SchemaError
from posediff.motion_data import (
    AnomalyInjector,
    MotionWindow,
    PoseTrack,
    Skeleton,
    SplitStrategy,
    SyntheticSpec,
    _Gait,
    generate_synthetic,
    load_labels,
    load_manifest,
    load_tracks,
    normalize_window,
    plan_injections,
    read_frame_label_array,
    read_tracked_person_json,
    slide_windows,
    write_labels,
    write_manifest,
    write_tracks,
)


def _track(n, rng, frames=None, J=17):
    frames = np.arange(n) if frames is None else np.asarray(frames)
    return PoseTrack("s", "a", frames, rng.normal(size=(len(frames), J, 2)), Skeleton.default_for(J))


def _write_records(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def test_skeleton_adjacency_symmetric_zero_diagonal():
    a = Skeleton.coco17().adjacency
    assert a.shape == (17, 17)
    assert np.array_equal(a, a.T)
    assert not np.any(np.diag(a))


def test_skeleton_rejects_self_loop():
    with pytest.raises(SchemaError):
        Skeleton(3, ((0, 0),), (0,))


def test_load_two_tracks_round_trip(tmp_path, rng):
    tracks = [
        PoseTrack("s1", "a", np.arange(10), rng.normal(size=(10, 17, 2))),
        PoseTrack("s1", "b", np.arange(10), rng.normal(size=(10, 17, 2))),
    ]
    p = tmp_path / "t.ndjson"
    write_tracks(tracks, p)
    back = load_tracks(p)
    assert len(back) == 2
    assert [len(t) for t in back] == [10, 10]
    for a, b in zip(tracks, back):
        assert np.array_equal(a.joints, b.joints)


def test_load_tracks_sorts_frames(tmp_path, rng):
    recs = [{"scene_id": "s", "actor_id": "a", "frame_index": f,
             "joints": rng.normal(size=(17, 2)).tolist()} for f in (3, 1, 2)]
    p = tmp_path / "t.ndjson"
    _write_records(p, recs)
    (t,) = load_tracks(p)
    assert t.frame_indices.tolist() == [1, 2, 3]


def test_joint_count_mismatch_is_schema_error(tmp_path, rng):
    recs = [{"scene_id": "s", "actor_id": "a", "frame_index": 0, "joints": rng.normal(size=(17, 2)).tolist()},
            {"scene_id": "s", "actor_id": "a", "frame_index": 1, "joints": rng.normal(size=(16, 2)).tolist()}]
    p = tmp_path / "t.ndjson"
    _write_records(p, recs)
    with pytest.raises(SchemaError):
        load_tracks(p)


def test_malformed_record_reports_line(tmp_path):
    p = tmp_path / "t.ndjson"
    p.write_text('{"scene_id": "s", "actor_id": "a", "frame_index": 0, "joints": [[0, 0]]}\n{not json\n')
    with pytest.raises(ParseError) as exc:
        load_tracks(p)
    assert exc.value.line == 2
    assert ":2:" in str(exc.value)


def test_low_confidence_joints_interpolated(tmp_path):
    recs = []
    for f in range(3):
        joints = [[float(f), float(f)]] * 2
        conf = [1.0, 1.0]
        if f == 1:
            joints = [[1.0, 1.0], [99.0, 99.0]]
            conf = [1.0, 0.05]
        recs.append({"scene_id": "s", "actor_id": "a", "frame_index": f, "joints": joints, "confidence": conf})
    p = tmp_path / "t.ndjson"
    _write_records(p, recs)
    (t,) = load_tracks(p, Skeleton.chain(2))
    assert t.missing[1, 1] and not t.missing[1, 0]
    assert np.allclose(t.joints[1, 1], [1.0, 1.0])


def test_gap_accepted_and_no_window_spans_it(rng):
    frames = [0, 1, 2, 3, 4, 5, 6, 10, 11, 12, 13, 14, 15, 16]
    t = _track(len(frames), rng, frames)
    assert t.gaps == [(6, 10)]
    ws = slide_windows(t, N=6, stride=1)
    starts = [int(np.flatnonzero(t.frame_indices == w.frame_indices[0])[0]) for w in ws]
    assert starts == contiguous_windows(frames, 6)
    for w in ws:
        assert np.all(np.diff(w.frame_indices) == 1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=40), st.integers(2, 7))
def test_windowing_matches_brute_force_enumerator(steps, N):
    frames = np.cumsum([0] + steps)
    t = PoseTrack("s", "a", frames, np.zeros((len(frames), 3, 2)), Skeleton.chain(3))
    k = max(1, N // 2)
    ws = slide_windows(t, N=N, stride=1, k=k)
    starts = [int(np.flatnonzero(frames == w.frame_indices[0])[0]) for w in ws]
    assert starts == contiguous_windows(frames, N)


@pytest.mark.parametrize("L,N", [(10, 6), (6, 6), (25, 3)])
def test_window_count_is_L_minus_N_plus_1(rng, L, N):
    assert len(slide_windows(_track(L, rng), N=N, k=1)) == L - N + 1


def test_short_track_gives_no_windows(rng):
    assert slide_windows(_track(4, rng), N=6) == []


def test_ten_frame_track_gives_five_windows(rng):
    assert len(slide_windows(_track(10, rng), N=6, stride=1)) == 5


def test_stride(rng):
    ws = slide_windows(_track(20, rng), N=6, stride=4)
    assert [int(w.frame_indices[0]) for w in ws] == [0, 4, 8, 12]


def test_forecasting_mask():
    assert SplitStrategy("forecasting").mask(6, 3).tolist() == [False] * 3 + [True] * 3


def test_in_between_mask_central_block():
    m = SplitStrategy("in_between").mask(6, 3)
    assert m.sum() == 3
    assert not m[0] and not m[-1]
    idx = np.flatnonzero(m)
    assert np.all(np.diff(idx) == 1)


@pytest.mark.parametrize("kind", ["forecasting", "in_between", "random_imputation"])
@pytest.mark.parametrize("N,k", [(6, 3), (8, 2), (5, 4), (10, 7)])
def test_mask_cardinality(kind, N, k):
    for key in range(20):
        assert SplitStrategy(kind, seed=1).mask(N, k, key).sum() == N - k


def test_random_imputation_seeded():
    a = SplitStrategy("random_imputation", 7).mask(6, 3, key=5)
    b = SplitStrategy("random_imputation", 7).mask(6, 3, key=5)
    assert np.array_equal(a, b)
    masks = {tuple(SplitStrategy("random_imputation", 7).mask(6, 3, key=i)) for i in range(50)}
    assert len(masks) > 5


def test_split_validation():
    with pytest.raises(ConfigError):
        SplitStrategy("sideways")
    with pytest.raises(ConfigError):
        SplitStrategy().mask(6, 6)


def _window(poses, k=3):
    n = len(poses)
    return MotionWindow("s", "a", np.arange(n), poses, SplitStrategy().mask(n, k), k)


def test_normalize_identity_case():
    J = 17
    rng = np.random.default_rng(0)
    poses = rng.uniform(size=(6, J, 2))
    past = poses[:3].reshape(-1, 2)
    # center the conditioning roots at the origin and make the bbox diagonal 1
    poses -= poses[:3, [11, 12]].reshape(-1, 2).mean(axis=0)
    past = poses[:3].reshape(-1, 2)
    poses /= np.linalg.norm(past.max(axis=0) - past.min(axis=0))
    out, rec = normalize_window(_window(poses))
    assert np.max(np.abs(out.poses - poses)) < 1e-12
    assert abs(rec.scale - 1.0) < 1e-12


def test_normalize_translation_and_scale_invariance(rng):
    poses = rng.normal(size=(6, 17, 2)) * 30 + 200
    base, _ = normalize_window(_window(poses))
    moved, _ = normalize_window(_window(poses + np.array([5.0, -3.0])))
    scaled, _ = normalize_window(_window(poses * 3.7))
    assert np.max(np.abs(base.poses - moved.poses)) <= 1e-9
    assert np.max(np.abs(base.poses - scaled.poses)) <= 1e-9


def test_normalize_round_trip(rng):
    poses = rng.normal(size=(6, 17, 2)) * 40 + 300
    out, rec = normalize_window(_window(poses))
    assert np.max(np.abs(rec.invert(out.poses) - poses)) < 1e-9


def test_normalize_same_transform_for_target_frames(rng):
    poses = rng.normal(size=(6, 17, 2))
    out, rec = normalize_window(_window(poses))
    assert np.allclose(out.poses[3:], (poses[3:] - rec.center) / rec.scale, atol=0, rtol=0)


def test_normalize_degenerate_box_falls_back(caplog):
    poses = np.ones((6, 17, 2))
    out, rec = normalize_window(_window(poses))
    assert rec.degenerate and rec.scale == 1.0
    assert np.all(np.isfinite(out.poses))
    assert "degenerate" in caplog.text


def test_normalize_none_mode(rng):
    poses = rng.normal(size=(6, 17, 2))
    out, rec = normalize_window(_window(poses), mode="none")
    assert np.array_equal(out.poses, poses)


def test_window_with_mostly_missing_joint_rejected(rng):
    t = _track(8, rng)
    t.missing[0:3, 4] = True
    ws = slide_windows(t, N=6)
    starts = [int(w.frame_indices[0]) for w in ws]
    assert 0 not in starts
    assert 2 in starts  # only one missing frame left


def test_synthetic_rate_zero_all_normal():
    _, labels = generate_synthetic(SyntheticSpec(n_actors=2, n_frames=60, injectors=({"kind": "freeze", "rate": 0.0},)))
    assert set(labels.values()) == {0}


def test_synthetic_deterministic_bytes(tmp_path):
    spec = SyntheticSpec(n_actors=2, n_frames=50, seed=9, injectors=({"kind": "teleport", "rate": 0.3},))
    for name in ("a", "b"):
        tracks, labels = generate_synthetic(spec)
        write_tracks(tracks, tmp_path / f"{name}.ndjson")
        write_labels(labels, tmp_path / f"{name}_lab.ndjson")
    assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()
    assert (tmp_path / "a_lab.ndjson").read_bytes() == (tmp_path / "b_lab.ndjson").read_bytes()


def test_synthetic_output_readable_by_loader(tmp_path):
    tracks, labels = generate_synthetic(SyntheticSpec(n_actors=3, n_frames=20))
    write_tracks(tracks, tmp_path / "t.ndjson")
    write_labels(labels, tmp_path / "l.ndjson")
    back = load_tracks(tmp_path / "t.ndjson")
    assert [t.key for t in back] == [t.key for t in tracks]
    assert load_labels(tmp_path / "l.ndjson") == labels


def test_freeze_rate_count_matches_seeded_draw():
    spec = SyntheticSpec(n_actors=1, n_frames=1000, seed=21, segment_length=10,
                         injectors=({"kind": "freeze", "rate": 0.1},))
    _, labels = generate_synthetic(spec)
    # replay the actor's stream: the gait consumes its draws before the plan
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    _Gait(spec, rng)
    plan = plan_injections(spec, rng)
    expected = sum(min(spec.segment_length, spec.n_frames - s) for _, s in plan)
    assert sum(labels.values()) == expected
    # Binomial(99, 0.1) blocks of 10 frames: ~100 frames, well inside 4 sd
    assert abs(expected - 99) < 4 * np.sqrt(99 * 0.1 * 0.9) * 10


def test_injected_frames_are_labelled():
    spec = SyntheticSpec(n_actors=1, n_frames=120, seed=5, segment_length=10,
                         injectors=({"kind": "teleport", "rate": 0.3, "magnitude": 1.0},))
    clean = SyntheticSpec(n_actors=1, n_frames=120, seed=5, segment_length=10)
    (t,), labels = generate_synthetic(spec)
    (c,), _ = generate_synthetic(clean)
    lab = np.array([labels[("scene000", f)] for f in range(120)], dtype=bool)
    assert lab.any()
    jump = np.linalg.norm(np.diff(t.joints.mean(axis=1), axis=0), axis=1)
    assert jump.max() > 20 * np.median(jump)


def test_injector_rate_validation():
    with pytest.raises(ConfigError):
        AnomalyInjector("freeze", 1.5)
    with pytest.raises(ConfigError):
        AnomalyInjector("melt", 0.1)


def test_manifest_round_trip(tmp_path):
    tracks, labels = generate_synthetic(SyntheticSpec(n_actors=2, n_frames=12))
    write_tracks(tracks, tmp_path / "t.ndjson")
    write_labels(labels, tmp_path / "l.ndjson")
    write_manifest(tmp_path / "m.yaml", Skeleton.coco17(), "t.ndjson", "l.ndjson")
    ds = load_manifest(tmp_path / "m.yaml")
    assert ds.skeleton == Skeleton.coco17()
    assert len(ds.tracks) == 2 and ds.labels == labels


def test_tracked_person_json_adapter(tmp_path, rng):
    data = {"1": {str(f): {"keypoints": np.c_[rng.normal(size=(17, 2)), np.ones(17)].ravel().tolist()}
                  for f in range(5)}}
    p = tmp_path / "01_0014_alphapose_tracked_person.json"
    p.write_text(json.dumps(data))
    (t,) = read_tracked_person_json(p)
    assert t.scene_id == "01_0014" and len(t) == 5
    np.save(tmp_path / "01_0014.npy", np.array([0, 0, 1, 1, 0]))
    lab = read_frame_label_array(tmp_path / "01_0014.npy")
    assert lab[("01_0014", 2)] == 1 and lab[("01_0014", 4)] == 0
