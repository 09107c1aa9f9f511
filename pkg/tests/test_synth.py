import numpy as np
import pytest

from blendrig.io import file_sha256
from blendrig.mesh import NUM_LANDMARKS, RigError
from blendrig.prior import validate
from blendrig.synth import (
    Diagnostics,
    IdentityCache,
    TemplateConfig,
    dataset_header,
    generate_dataset,
    head_radius,
    identity_ranges_disjoint,
    make_identity,
    make_template,
    read_dataset,
    render_landmarks,
    write_dataset,
)


@pytest.fixture(scope="module")
def small_cache(small_template):
    return IdentityCache(small_template)


def test_template_is_deterministic(small_template):
    again = make_template(TemplateConfig(resolution=300))
    assert np.array_equal(again.neutral.vertices, small_template.neutral.vertices)
    assert np.array_equal(again.neutral.faces, small_template.neutral.faces)
    assert np.array_equal(again.deltas, small_template.deltas)


def test_template_invariants(template):
    assert len(template.landmark_map) == NUM_LANDMARKS
    assert len(set(template.landmark_map.indices.tolist())) == NUM_LANDMARKS
    assert all(np.array_equal(s.faces, template.neutral.faces) for s in template.shapes)
    with pytest.raises(RigError):
        TemplateConfig(resolution=150)


def test_jaw_open_is_local(template):
    d = np.linalg.norm(template.deltas[template.index("jawOpen")], axis=1)
    top = d.max()
    verts = template.neutral.vertices
    mouth_y = TemplateConfig().mouth_center[1]
    # largest motion below the mouth line, i.e. on the chin
    assert verts[np.argmax(d), 1] < mouth_y
    lm = template.landmark_map
    eyes = lm.indices[np.array(lm.regions) == "eyes"]
    assert d[eyes].max() < 0.01 * top


def test_shapes_have_full_landmark_rank(template):
    # no combination of blendshapes is invisible in the landmarks
    _, deltas = template.landmark_basis()
    s = np.linalg.svd(deltas.reshape(52, -1), compute_uv=False)
    assert s[-1] > 1e-3 * s[0]


def test_identity_properties(template):
    a = make_identity(template, 3)
    assert np.array_equal(a.vertices, make_identity(template, 3).vertices)
    assert np.array_equal(a.faces, template.neutral.faces)
    assert make_identity(template, 3, amplitude=0.0) is template.neutral
    off = np.linalg.norm(a.vertices - template.neutral.vertices, axis=1)
    assert off.max() <= 0.05 * head_radius(template.neutral) + 1e-12


def test_identities_are_distinct(small_template):
    ids = np.stack([make_identity(small_template, k).vertices for k in range(100)])
    flat = ids.reshape(100, -1)
    for i in range(100):
        d = np.max(np.abs(flat[i + 1:] - flat[i]), axis=1)
        assert np.all(d > 0)


def test_dataset_deterministic_and_valid(small_template, prior, camera, small_cache, tmp_path):
    n = 1000

    def write(path):
        samples = list(generate_dataset(n, small_template, prior, camera, seed=5, n_identities=4, cache=small_cache))
        return write_dataset(path, dataset_header(5, n, camera, prior, small_template, n_identities=4), samples), samples

    h1, samples = write(tmp_path / "a.jsonl")
    h2, _ = write(tmp_path / "b.jsonl")
    assert h1 == h2 == file_sha256(tmp_path / "b.jsonl")
    pair = small_template.landmark_map.interocular_pair
    for s in samples:
        assert s.landmarks2d.shape == (NUM_LANDMARKS, 2)
        assert validate(s.coefficients, prior) == []
        assert np.linalg.norm(s.landmarks2d[pair[0]] - s.landmarks2d[pair[1]]) > 0


def test_ground_truth_rerenders_exactly(small_template, prior, camera, tmp_path):
    samples = list(generate_dataset(30, small_template, prior, camera, seed=2, n_identities=3))
    path = tmp_path / "d.jsonl"
    write_dataset(path, dataset_header(2, 30, camera, prior, small_template, n_identities=3), samples)
    header, back = read_dataset(path)
    # a fresh cache rebuilds each identity from its id alone
    fresh = IdentityCache(small_template)
    for s in back:
        again = render_landmarks(fresh[s.identity_id], s.coefficients, s.pose, camera)
        assert np.max(np.abs(again - s.landmarks2d)) == 0.0
    assert header["n"] == 30 and header["prior_hash"] == prior.hash()


def test_samples_stream_independent_of_batch(small_template, prior, camera, small_cache):
    # sample i only depends on (seed, index): a later slice matches the tail of a longer run
    full = list(generate_dataset(12, small_template, prior, camera, seed=4, n_identities=3, cache=small_cache))
    tail = list(generate_dataset(4, small_template, prior, camera, seed=4, n_identities=3, sample_offset=8,
                                 cache=small_cache))
    for a, b in zip(full[8:], tail):
        assert a.index == b.index and np.array_equal(a.landmarks2d, b.landmarks2d)


def test_holdout_identities_disjoint(small_template, prior, camera, small_cache):
    tr = dataset_header(0, 10, camera, prior, small_template, n_identities=3)
    ho = dataset_header(1, 10, camera, prior, small_template, n_identities=2, identity_offset=3)
    assert identity_ranges_disjoint(tr, ho)
    assert not identity_ranges_disjoint(tr, dataset_header(1, 10, camera, prior, small_template, n_identities=2,
                                                           identity_offset=2))
    ids = {s.identity_id for s in generate_dataset(40, small_template, prior, camera, seed=1, n_identities=2,
                                                   identity_offset=3, cache=small_cache)}
    assert ids <= {3, 4}


def test_no_pose_resamples_in_default_box(small_template, prior, camera, small_cache):
    diag = Diagnostics()
    list(generate_dataset(200, small_template, prior, camera, seed=8, n_identities=2, cache=small_cache,
                          diagnostics=diag))
    assert diag.pose_resamples == 0


def test_bad_arguments(small_template, prior):
    with pytest.raises(ValueError):
        next(generate_dataset(0, small_template, prior))


def test_missing_header_rejected(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text("")
    with pytest.raises(ValueError):
        read_dataset(p)
