from __future__ import annotations

import json

import numpy as np
import pytest

from japs.environment import (
    EnvironmentSpec,
    InfeasibleEnvironment,
    World,
    audit,
    draw_context,
    generate_environment,
    reference_spec,
)


@pytest.mark.parametrize("seed", range(100))
def test_generated_worlds_pass_audit(seed):
    spec = EnvironmentSpec(d=1 + seed % 4, N=2 + seed % 7, K=1 + seed % 3, W=1.0, L0=0.3 + 0.002 * seed,
                           seed=seed)
    cat, params, _ = generate_environment(spec)
    assert all(audit(cat, params, spec.L0).values())


def test_canonical_features():
    spec = EnvironmentSpec(d=3, N=3, K=2, W=1.0, L0=0.4, feature_style="canonical", seed=2)
    cat, params, _ = generate_environment(spec)
    np.testing.assert_array_equal(cat.items, np.eye(3))
    assert np.all(params.phi >= 0.4)
    np.testing.assert_allclose(params.beta(cat), params.phi)


def test_canonical_needs_square_features():
    with pytest.raises(InfeasibleEnvironment):
        generate_environment(EnvironmentSpec(d=2, N=3, K=1, W=1.0, L0=0.2, feature_style="canonical"))


def test_floor_above_norm_cap_is_infeasible():
    with pytest.raises(InfeasibleEnvironment, match="L0"):
        generate_environment(EnvironmentSpec(d=2, N=3, K=1, W=0.5, L0=0.6))


def test_canonical_floor_too_high():
    with pytest.raises(InfeasibleEnvironment, match="sqrt"):
        generate_environment(EnvironmentSpec(d=4, N=4, K=1, W=1.0, L0=0.6, feature_style="canonical"))


def test_same_spec_same_world():
    a = World.generate(reference_spec(5))
    b = World.generate(reference_spec(5))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_reference_world_frozen(world):
    assert world.N == 6 and world.d == 2 and world.K == 2
    assert world.constants.P == pytest.approx(9.386294361119891)
    np.testing.assert_allclose(world.grid, np.linspace(0, world.constants.P, 5))
    assert np.linalg.norm(world.params.theta) <= 1.0


def test_world_round_trip(world):
    back = World.from_dict(json.loads(json.dumps(world.to_dict())))
    np.testing.assert_array_equal(back.catalog.items, world.catalog.items)
    np.testing.assert_array_equal(back.params.theta, world.params.theta)
    assert back.spec == world.spec


def test_iid_contexts_respect_floor(world):
    rng = np.random.default_rng(0)
    for _ in range(20):
        cat = draw_context(rng, world.params.phi, world.N, 0.5)
        assert np.all(world.params.beta(cat) >= 0.5)


def test_spec_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        EnvironmentSpec.from_dict({"d": 2, "N": 3, "K": 1, "W": 1.0, "L0": 0.5, "colour": "red"})


@pytest.mark.parametrize("kwargs", [dict(d=0), dict(L0=-1.0), dict(context_mode="sometimes"),
                                    dict(feature_style="fancy")])
def test_spec_validation(kwargs):
    base = dict(d=2, N=3, K=1, W=1.0, L0=0.5)
    base.update(kwargs)
    with pytest.raises(ValueError):
        EnvironmentSpec(**base)
