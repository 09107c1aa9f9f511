import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blendrig.mesh import ARKIT_NAMES
from blendrig.prior import (
    PriorSpecError,
    active_groups,
    load_prior,
    prior_from_dict,
    sample_batch,
    sample_coefficients,
    validate,
)


def _smile_only(symmetric=True):
    groups = {"smile": {"members": ["mouthSmileLeft", "mouthSmileRight"], "region": "mouth", "symmetric": symmetric}}
    # every other name gets its own asymmetric group in a capped-at-zero region
    for n in ARKIT_NAMES:
        if n not in ("mouthSmileLeft", "mouthSmileRight"):
            groups[n] = {"members": [n], "region": "off"}
    return prior_from_dict({"regions": {"mouth": {"max_active": 1}, "off": {"max_active": 0}}, "groups": groups})


def test_default_spec_covers_every_name_once(prior):
    members = [m for g in prior.groups for m in g.members]
    assert sorted(members) == sorted(ARKIT_NAMES)
    assert prior.regions["mouth"] == 4
    assert {"mouth", "eye", "eyebrow", "iris"} <= set(prior.regions)


def test_zeros_validate(prior):
    assert validate(np.zeros(52), prior) == []


def test_ordering_violation_names_both(prior):
    w = np.zeros(52)
    w[prior.index("mouthClose")] = 0.9
    w[prior.index("jawOpen")] = 0.2
    v = validate(w, prior)
    assert len(v) == 1
    assert v[0].rule == "le" and set(v[0].names) == {"mouthClose", "jawOpen"}


def test_other_violations(prior):
    w = np.zeros(52)
    w[prior.index("eyeBlinkLeft")] = 0.5
    w[prior.index("eyeWideLeft")] = 0.5
    assert [x.rule for x in validate(w, prior)] == ["exclusive"]
    w = np.zeros(52)
    w[3] = 1.2
    assert [x.rule for x in validate(w, prior)] == ["range"]
    assert validate(np.zeros(51), prior)[0].rule == "shape"
    # five mouth groups at once
    w = np.zeros(52)
    for n in ("jawOpen", "mouthFunnel", "mouthPucker", "mouthSmileLeft", "mouthFrownLeft"):
        w[prior.index(n)] = 0.3
    assert [x.rule for x in validate(w, prior)] == ["max_active:mouth"]


def test_symmetric_branch_forced():
    spec = _smile_only()
    l, r = spec.index("mouthSmileLeft"), spec.index("mouthSmileRight")
    hits = 0
    for s in range(50):
        w = sample_coefficients(spec, s, force_symmetric=True)
        assert w[l] == w[r]
        hits += w[l] > 0
        assert np.count_nonzero(w) in (0, 2)
    assert hits > 10


def test_independent_branch_differs():
    spec = _smile_only()
    l, r = spec.index("mouthSmileLeft"), spec.index("mouthSmileRight")
    ws = [sample_coefficients(spec, s, force_symmetric=False) for s in range(50)]
    active = [w for w in ws if w[l] > 0]
    assert active and all(w[l] != w[r] for w in active)


def test_sampling_is_deterministic(prior):
    assert np.array_equal(sample_coefficients(prior, [3, 4]), sample_coefficients(prior, [3, 4]))
    assert np.array_equal(sample_batch(prior, 20, 9), sample_batch(prior, 20, 9))
    assert not np.array_equal(sample_coefficients(prior, [3, 4]), sample_coefficients(prior, [3, 5]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 10**6))
def test_samples_always_validate(prior, seed, i):
    w = sample_coefficients(prior, [seed, i])
    assert validate(w, prior) == []
    assert len(active_groups(w, prior, "mouth")) <= 4


def test_bad_specs_rejected(prior):
    d = prior.to_dict()
    bad = json.loads(json.dumps(d))
    bad["rules"].append({"type": "le", "lhs": "mouthOpen", "rhs": "jawOpen"})
    with pytest.raises(PriorSpecError):
        prior_from_dict(bad)
    bad = json.loads(json.dumps(d))
    bad["groups"]["jawOpen"]["region"] = "neck"
    with pytest.raises(PriorSpecError):
        prior_from_dict(bad)
    bad = json.loads(json.dumps(d))
    del bad["groups"]["tongueOut"]
    with pytest.raises(PriorSpecError):
        prior_from_dict(bad)
    bad = json.loads(json.dumps(d))
    bad["groups"]["extra"] = {"members": ["jawOpen"], "region": "mouth"}
    with pytest.raises(PriorSpecError):
        prior_from_dict(bad)


def test_spec_file_round_trip(prior, tmp_path):
    p = tmp_path / "prior.json"
    p.write_text(json.dumps(prior.to_dict()))
    back = load_prior(p)
    assert back.hash() == prior.hash()
    assert np.array_equal(sample_coefficients(back, 7), sample_coefficients(prior, 7))


def test_ranges_respected(prior):
    d = prior.to_dict()
    d["ranges"] = {"jawOpen": [0.2, 0.4]}
    spec = prior_from_dict(d)
    j = spec.index("jawOpen")
    vals = sample_batch(spec, 400, 1)[:, j]
    on = vals[vals > 0]
    assert on.size and on.min() >= 0.2 and on.max() <= 0.4
