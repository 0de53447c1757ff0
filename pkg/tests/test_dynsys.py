import math

import numpy as np
import pytest
from scipy import integrate

from modules.dynsys import (
    OrbitState, SystemId, ball_measure, ball_radius_for_mass, gauss_inverse_cdf, generate_orbit, get_system,
    inverse_step, sample_initial, step, torus_distance, validate_site,
)
from modules.errors import ConfigError, DegenerateState
from modules.observables import GOLDEN_SITE
from modules.rng import Stream, make_rng
from modules.stats import ks_distance

ALL_SYSTEMS = ["iid", "doubling", "catmap", "gauss"]


def _stepped(system, state, n):
    points = []
    for _ in range(n):
        points.append(state.point())
        state = step(system, state)
    return np.array(points), state


@pytest.mark.parametrize("name", ALL_SYSTEMS)
def test_generate_orbit_matches_step(name, seed):
    system = get_system(name)
    a = sample_initial(system, make_rng(seed, Stream.ORBIT, 3))
    b = sample_initial(system, make_rng(seed, Stream.ORBIT, 3))
    expected, end_a = _stepped(system, a, 300)
    points, end_b = generate_orbit(system, b, 300)
    np.testing.assert_array_equal(points, expected.reshape(points.shape))
    assert end_b.words == end_a.words
    assert end_b.x == end_a.x
    assert end_b.step_index == 300
    # both continue identically
    assert step(system, end_a).point() == step(system, end_b).point()


@pytest.mark.parametrize("name", ALL_SYSTEMS)
def test_generate_orbit_chunking_is_invisible(name, seed):
    system = get_system(name)
    whole, _ = generate_orbit(system, sample_initial(system, make_rng(seed)), 1000)
    state = sample_initial(system, make_rng(seed))
    parts = []
    for n in (1, 63, 64, 200, 672):
        chunk, state = generate_orbit(system, state, n)
        parts.append(chunk)
    np.testing.assert_array_equal(np.concatenate(parts), whole)


def test_same_seed_same_sequence(seed):
    system = get_system("iid")
    first, _ = generate_orbit(system, sample_initial(system, make_rng(seed)), 50)
    second, _ = generate_orbit(system, sample_initial(system, make_rng(seed)), 50)
    other, _ = generate_orbit(system, sample_initial(system, make_rng(seed, Stream.ORBIT, 1)), 50)
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, other)


def test_gauss_inverse_cdf_endpoints():
    assert gauss_inverse_cdf(0.0) == 0.0
    assert gauss_inverse_cdf(1.0) == 1.0


def test_catmap_step_example():
    system = get_system("catmap")
    state = OrbitState(SystemId.CATMAP, words=(1 << 126, 1 << 126))
    assert step(system, state).point() == (0.75, 0.5)


def test_catmap_inverse_is_exact(seed):
    system = get_system("catmap")
    start = sample_initial(system, make_rng(seed))
    state = start
    for _ in range(1000):
        state = step(system, state)
    for _ in range(1000):
        state = inverse_step(system, state)
    assert state.words == start.words
    assert state.step_index == 0


def test_inverse_step_rejects_noninvertible():
    system = get_system("doubling")
    with pytest.raises(ValueError):
        inverse_step(system, OrbitState(SystemId.DOUBLING, words=(0, 0, 0)))


def test_doubling_is_a_left_shift():
    system = get_system("doubling")
    # window 0.101... -> 0.01...
    state = OrbitState(SystemId.DOUBLING, words=(0b101 << 61, 0, 64))
    assert state.point()[0] == 0.625
    assert step(system, state).point()[0] == 0.25


def test_doubling_orbit_follows_2x_mod_1(seed):
    system = get_system("doubling")
    points, _ = generate_orbit(system, sample_initial(system, make_rng(seed)), 2000)
    x = points[:, 0]
    assert np.all(np.abs(x[1:] - np.mod(2.0 * x[:-1], 1.0)) <= 2.0 ** -52)


def test_catmap_orbit_follows_matrix(seed):
    system = get_system("catmap")
    points, _ = generate_orbit(system, sample_initial(system, make_rng(seed)), 500)
    for (x, y), (nx, ny) in zip(points[:-1], points[1:]):
        assert torus_distance(system, (nx, ny), (math.fmod(2 * x + y, 1.0), math.fmod(x + y, 1.0))) < 1e-14


def test_gauss_step_example():
    system = get_system("gauss")
    assert step(system, OrbitState(SystemId.GAUSS, x=0.4)).x == pytest.approx(0.5)


def test_gauss_zero_is_degenerate():
    system = get_system("gauss")
    with pytest.raises(DegenerateState):
        step(system, OrbitState(SystemId.GAUSS, x=0.0))
    with pytest.raises(DegenerateState):
        generate_orbit(system, OrbitState(SystemId.GAUSS, x=0.5), 5)


def test_torus_distance_examples():
    torus1, torus2, interval = get_system("doubling"), get_system("catmap"), get_system("iid")
    assert torus_distance(torus1, 0.9, 0.1) == pytest.approx(0.2)
    assert torus_distance(torus1, 0.3, 0.3) == 0.0
    assert torus_distance(torus2, (0.95, 0.0), (0.05, 0.0)) == pytest.approx(0.1)
    assert torus_distance(interval, 0.9, 0.1) == pytest.approx(0.8)


def test_vectorized_distances_wrap():
    system = get_system("doubling")
    np.testing.assert_allclose(system.distances(np.array([[0.95], [0.5]]), (0.05,)), [0.1, 0.45])


def test_unknown_system():
    with pytest.raises(ConfigError, match="system"):
        get_system("tent")


def test_ball_measure_closed_forms():
    assert ball_measure(get_system("doubling"), (0.3,), 0.1) == pytest.approx(0.2)
    assert ball_measure(get_system("doubling"), (0.3,), 0.7) == 1.0
    assert ball_measure(get_system("catmap"), (0.2, 0.4), 0.1) == pytest.approx(math.pi * 0.01)
    assert ball_measure(get_system("catmap"), (0.2, 0.4), 0.75) == 1.0
    assert ball_measure(get_system("gauss"), (0.0,), 0.5) == pytest.approx(math.log2(1.5))
    assert ball_measure(get_system("iid"), (0.2,), 0.3) == pytest.approx(0.5)
    assert ball_measure(get_system("iid"), (0.2,), 0.0) == 0.0


@pytest.mark.parametrize("name,site,mass", [
    ("doubling", (GOLDEN_SITE,), 1e-3),
    ("catmap", (GOLDEN_SITE, math.sqrt(2) - 1), 0.01),
    ("catmap", (GOLDEN_SITE, math.sqrt(2) - 1), 0.9),
    ("gauss", (0.0,), 0.3),
    ("iid", (0.3,), 0.5),
])
def test_ball_radius_inverts_measure(name, site, mass):
    system = get_system(name)
    r = ball_radius_for_mass(system, site, mass)
    assert ball_measure(system, site, r) == pytest.approx(mass, rel=1e-9)


def test_validate_site():
    validate_site(get_system("doubling"), (GOLDEN_SITE,))
    validate_site(get_system("gauss"), (0.0,))
    validate_site(get_system("iid"), (0.5,))
    with pytest.raises(ConfigError, match="site"):
        validate_site(get_system("doubling"), (0.5,))
    with pytest.raises(ConfigError):
        validate_site(get_system("catmap"), (0.25, 0.75))
    with pytest.raises(ConfigError):
        validate_site(get_system("catmap"), (GOLDEN_SITE,))
    with pytest.raises(ConfigError):
        validate_site(get_system("doubling"), (1.2,))


@pytest.mark.parametrize("name", ALL_SYSTEMS)
def test_orbit_equidistributes(name, seed):
    system = get_system(name)
    site = (GOLDEN_SITE,) if system.dimension == 1 else (GOLDEN_SITE, math.sqrt(2) - 1)
    n, batches = 1_000_000, 100
    points, _ = generate_orbit(system, sample_initial(system, make_rng(seed)), n)
    inside = (system.distances(points, site) < 0.05).reshape(batches, -1).mean(axis=1)
    p = ball_measure(system, site, 0.05)
    # batch means carry the orbit correlations; never go below the independent error
    se = max(inside.std(ddof=1), math.sqrt(p * (1 - p) * batches / n)) / math.sqrt(batches)
    assert abs(inside.mean() - p) < 3 * se


def test_gauss_sampler_follows_gauss_measure(seed):
    system = get_system("gauss")
    rng = make_rng(seed, Stream.ORBIT)
    xs = np.array([sample_initial(system, rng).x for _ in range(1_000_000)])
    assert ks_distance(xs, lambda x: np.log2(1.0 + x)) < 0.005


@pytest.mark.parametrize("name", ["iid", "doubling", "gauss"])
def test_density_integrates_to_one(name):
    system = get_system(name)
    value, _ = integrate.quad(system.density_at, 0.0, 1.0)
    assert value == pytest.approx(1.0, abs=1e-10)


def test_catmap_density_integrates_to_one():
    system = get_system("catmap")
    value, _ = integrate.dblquad(lambda y, x: system.density_at((x, y)), 0.0, 1.0, 0.0, 1.0)
    assert value == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("name", ALL_SYSTEMS)
def test_metric_triangle_inequality(name, seed):
    system = get_system(name)
    triples = make_rng(seed, Stream.ORACLE).random((2000, 3, system.dimension))
    for a, b, c in triples:
        ab, bc, ac = system.metric(a, b), system.metric(b, c), system.metric(a, c)
        assert ac <= ab + bc + 1e-12
        assert ab == system.metric(b, a)
        assert system.metric(a, a) == 0.0
