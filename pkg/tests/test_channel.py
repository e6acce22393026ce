import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mabs.channel import (ChannelMatrix, UserChannelSpec, channel_matrix, channel_vector,
                          field_response_vector, phase_difference)

HALF_PI = math.pi / 2
angles = st.floats(-HALF_PI, HALF_PI)
coords = st.floats(-0.15, 0.15)


def make_user(theta, phi, g):
    return UserChannelSpec(np.atleast_1d(theta), np.atleast_1d(phi), np.atleast_1d(g))


def random_user(rng, L):
    return UserChannelSpec(rng.uniform(-HALF_PI, HALF_PI, L), rng.uniform(-HALF_PI, HALF_PI, L),
                           rng.standard_normal(L) + 1j * rng.standard_normal(L))


def naive_channel(apv, user, wavelength):
    # element-by-element sum with scalar complex arithmetic
    out = []
    for x, y in apv:
        acc = 0j
        for th, ph, g in zip(user.elevation_aoas, user.azimuth_aoas, user.path_response):
            rho = x * math.sin(th) * math.cos(ph) + y * math.cos(th)
            acc += cmath.exp(1j * 2 * math.pi / wavelength * rho).conjugate() * complex(g)
        out.append(acc)
    return np.array(out)


def test_phase_difference_at_reference_point():
    assert phase_difference((0.0, 0.0), 0.3, -1.1) == 0.0


def test_phase_difference_zero_elevation_picks_y():
    assert phase_difference((0.03, 0.05), 0.0, 0.7) == pytest.approx(0.05, abs=1e-15)


def test_phase_difference_hand_value():
    # 0.02 * sqrt(2)/2 + 0.01 * sqrt(2)/2 = 0.03 / sqrt(2)
    assert phase_difference((0.02, 0.01), math.pi / 4, 0.0) == pytest.approx(0.03 / math.sqrt(2), rel=1e-14)
    assert 0.03 / math.sqrt(2) == pytest.approx(0.021213203, abs=1e-9)


def test_frv_at_origin_is_all_ones():
    user = make_user([0.1, -0.4, 1.2], [0.5, 0.0, -1.0], [1, 2, 3])
    np.testing.assert_array_equal(field_response_vector((0.0, 0.0), user, 0.1), np.ones(3))


def test_frv_quarter_wavelength_is_j():
    lam = 0.1
    user = make_user(0.0, 0.0, 1.0)
    f = field_response_vector((0.0, lam / 4), user, lam)
    np.testing.assert_allclose(f, [1j], atol=1e-15)


def test_frv_hand_value():
    user = make_user(math.pi / 4, 0.0, 1.0)
    f = field_response_vector((0.02, 0.01), user, 0.1)
    expected = cmath.exp(1j * 2 * math.pi * 0.03 / math.sqrt(2) / 0.1)
    assert f[0] == pytest.approx(expected, rel=1e-13)


def test_frv_rejects_bad_wavelength():
    with pytest.raises(ValueError):
        field_response_vector((0, 0), make_user(0, 0, 1), 0.0)


def test_user_spec_validates_lengths_and_angles():
    with pytest.raises(ValueError):
        UserChannelSpec([0.1, 0.2], [0.1], [1, 1])
    with pytest.raises(ValueError):
        UserChannelSpec([], [], [])
    with pytest.raises(ValueError):
        UserChannelSpec([2.0], [0.0], [1.0])


def test_channel_vector_single_antenna_at_origin_sums_gains():
    g = np.array([0.3 - 1j, 2 + 0.5j, -1 + 0j])
    user = make_user([0.2, -0.9, 1.4], [0.1, 0.3, -0.6], g)
    h = channel_vector(np.zeros((1, 2)), user, 0.1)
    assert h.shape == (1,)
    assert h[0] == pytest.approx(g.sum(), abs=1e-15)


def test_channel_vector_single_path_preserves_magnitude():
    c = 0.7 - 0.2j
    user = make_user(0.4, -1.0, c)
    apv = np.random.default_rng(0).uniform(-0.15, 0.15, (6, 2))
    np.testing.assert_allclose(np.abs(channel_vector(apv, user, 0.1)), abs(c), rtol=1e-14)


def test_channel_vector_matches_naive_sum():
    rng = np.random.default_rng(1)
    user = random_user(rng, 3)
    apv = rng.uniform(-0.15, 0.15, (2, 2))
    np.testing.assert_allclose(channel_vector(apv, user, 0.1), naive_channel(apv, user, 0.1),
                               rtol=1e-12)


def test_channel_vector_accepts_flat_apv():
    rng = np.random.default_rng(2)
    user = random_user(rng, 4)
    apv = rng.uniform(-0.15, 0.15, (5, 2))
    np.testing.assert_array_equal(channel_vector(apv.ravel(), user, 0.1),
                                  channel_vector(apv, user, 0.1))


def test_channel_matrix_single_user():
    rng = np.random.default_rng(3)
    user = random_user(rng, 5)
    apv = rng.uniform(-0.15, 0.15, (4, 2))
    H = channel_matrix(apv, [user], 0.1)
    assert isinstance(H, ChannelMatrix)
    assert H.entries.shape == (4, 1)
    assert H.carrier_wavelength == 0.1
    np.testing.assert_array_equal(H.entries[:, 0], channel_vector(apv, user, 0.1))


def test_channel_matrix_permutes_columns_with_users():
    rng = np.random.default_rng(4)
    users = [random_user(rng, 3) for _ in range(3)]
    apv = rng.uniform(-0.15, 0.15, (4, 2))
    H = channel_matrix(apv, users, 0.1).entries
    Hp = channel_matrix(apv, [users[2], users[0], users[1]], 0.1).entries
    np.testing.assert_array_equal(Hp, H[:, [2, 0, 1]])


def test_channel_matrix_stacks_columns():
    rng = np.random.default_rng(5)
    users = [random_user(rng, 2) for _ in range(2)]
    apv = rng.uniform(-0.15, 0.15, (2, 2))
    H = channel_matrix(apv, users, 0.1)
    stacked = np.column_stack([naive_channel(apv, u, 0.1) for u in users])
    np.testing.assert_allclose(H.entries, stacked, rtol=1e-12)
    assert H.num_antennas == 2 and H.num_users == 2


def test_batched_positions_match_single_calls():
    rng = np.random.default_rng(6)
    users = [random_user(rng, 4) for _ in range(3)]
    batch = rng.uniform(-0.15, 0.15, (7, 5, 2))
    H = channel_matrix(batch, users, 0.1).entries
    assert H.shape == (7, 5, 3)
    for b in range(7):
        np.testing.assert_array_equal(H[b], channel_matrix(batch[b], users, 0.1).entries)


@settings(max_examples=60, deadline=None)
@given(x=coords, y=coords, theta=st.lists(angles, min_size=1, max_size=6),
       seed=st.integers(0, 2**32 - 1))
def test_frv_unit_modulus(x, y, theta, seed):
    rng = np.random.default_rng(seed)
    L = len(theta)
    user = UserChannelSpec(theta, rng.uniform(-HALF_PI, HALF_PI, L), np.ones(L))
    f = field_response_vector((x, y), user, 0.1)
    np.testing.assert_allclose(np.abs(f), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(1, 8), M=st.integers(1, 6))
def test_channel_magnitude_bound_and_origin_reference(seed, L, M):
    rng = np.random.default_rng(seed)
    user = random_user(rng, L)
    apv = rng.uniform(-0.15, 0.15, (M, 2))
    apv[0] = 0.0
    h = channel_vector(apv, user, 0.1)
    bound = np.sum(np.abs(user.path_response))
    assert np.all(np.abs(h) <= bound * (1 + 1e-12))
    assert h[0] == user.path_response.sum()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(1, 8))
def test_single_path_norm_is_placement_invariant(seed, M):
    rng = np.random.default_rng(seed)
    user = random_user(rng, 1)
    a = channel_vector(rng.uniform(-0.15, 0.15, (M, 2)), user, 0.1)
    b = channel_vector(rng.uniform(-0.15, 0.15, (M, 2)), user, 0.1)
    assert np.linalg.norm(a) == pytest.approx(np.linalg.norm(b), rel=1e-12)


def test_determinism_bit_identical():
    rng = np.random.default_rng(7)
    users = [random_user(rng, 6) for _ in range(4)]
    apv = rng.uniform(-0.15, 0.15, (8, 2))
    a = channel_matrix(apv, users, 0.1).entries
    b = channel_matrix(apv.copy(), users, 0.1).entries
    assert a.tobytes() == b.tobytes()
