import numpy as np
import pytest

from ifslearn.chain import (
    MixingEstimate,
    NotMixedError,
    Partition,
    attach_observations,
    check_mixing_bounds,
    estimate_mixing,
    simulate_chain,
    tv_distance,
)
from ifslearn.copula_core import AffineMap, IfsSystem, TransformationMatrix, ValidationError, build_ifs


@pytest.fixture(scope="module")
def uniform_ifs():
    return build_ifs(TransformationMatrix.uniform(2))


def test_chain_is_deterministic_and_stays_in_square(uniform_ifs):
    a = simulate_chain(uniform_ifs, [0.2, 0.9], 1000, 5)
    b = simulate_chain(uniform_ifs, [0.2, 0.9], 1000, 5)
    assert np.array_equal(a.states, b.states)
    assert a.states.min() >= 0 and a.states.max() <= 1


def test_states_follow_selected_maps(uniform_ifs):
    tr = simulate_chain(uniform_ifs, [0.2, 0.9], 20, 1)
    prev = tr.x0
    for s, k in zip(tr.states, tr.map_indices):
        np.testing.assert_allclose(s, uniform_ifs.maps[k](prev))
        prev = s


def test_single_contraction_converges_to_its_fixed_point():
    ifs = IfsSystem((AffineMap(0.25, 0.5, 0.25, 0.5),), np.array([1.0]))
    tr = simulate_chain(ifs, [0.0, 1.0], 60, 0)
    np.testing.assert_allclose(tr.states[-1], [0.5, 0.5], atol=1e-12)


def test_invalid_start(uniform_ifs):
    with pytest.raises(ValidationError):
        simulate_chain(uniform_ifs, [1.5, 0.2], 10, 0)
    with pytest.raises(ValidationError):
        simulate_chain(uniform_ifs, [0.5, 0.2], 0, 0)


def test_observations_noise_and_bound(uniform_ifs):
    tr = simulate_chain(uniform_ifs, [0.5, 0.5], 500, 3)
    target = lambda X: 0.5 * np.asarray(X)[:, 0]
    s = attach_observations(tr, target, 0.1, 1.0, 3)
    ys = np.array([z.y for z in s])
    e = ys - 0.5 * tr.states[:, 0]
    assert np.abs(e).max() <= 0.1 and abs(e.mean()) < 0.02
    with pytest.raises(ValidationError, match="exceeds M"):
        attach_observations(tr, target, 0.6, 1.0, 3)


def test_partition_uses_matrix_cells():
    ifs = build_ifs(TransformationMatrix([[0.2, 0.3], [0.1, 0.4]]))
    part = Partition.for_ifs(ifs, 2)
    np.testing.assert_allclose(part.x_breaks, [0, 0.3, 1])
    i, j = part.cell_index([[0.29, 0.49], [0.31, 0.51], [1.0, 1.0]])
    assert list(i) == [0, 1, 1] and list(j) == [0, 1, 1]


def test_tv_distance_range(uniform_ifs):
    part = Partition.for_ifs(uniform_ifs, 2)
    p = part.histogram([[0.1, 0.1]])
    q = part.histogram([[0.9, 0.9]])
    assert tv_distance(p, q) == 1.0 and tv_distance(p, p) == 0.0


def test_uniform_matrix_mixes_in_one_step(uniform_ifs):
    est = estimate_mixing(uniform_ifs, 2, n_reps=5000, seed=1, reference_length=50_000)
    assert est.t_mix == 1
    assert check_mixing_bounds(est).passed


def test_epsilon_one_gives_zero_mixing_time(uniform_ifs):
    # the default 20000 replicates keep the Monte-Carlo floor of d(t) below 2^(1-6)
    est = estimate_mixing(uniform_ifs, 2, epsilon=1.0, seed=1)
    assert est.t_mix == 0
    assert check_mixing_bounds(est).passed


def test_not_mixed_carries_curve():
    # diagonal matrix on a fine grid: off-diagonal starts are still far from the attractor after one step
    ifs = build_ifs(TransformationMatrix([[0.5, 0.0], [0.0, 0.5]]))
    with pytest.raises(NotMixedError) as info:
        estimate_mixing(ifs, 8, horizon=1, n_reps=2000, seed=0, reference_length=20_000)
    assert len(info.value.d_curve) == 2 and info.value.d_curve[-1] > 0.25


def test_mixing_bound_check_flags_violations():
    est = MixingEstimate([1.0, 0.2, 0.9, 0.8], 1)
    rep = check_mixing_bounds(est)
    assert not rep.decay_passed and rep.failures == [2, 3]
