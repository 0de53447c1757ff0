import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from modules.dynsys import ball_measure, generate_orbit, get_system, sample_initial
from modules.errors import ConfigError, DegenerateHit
from modules.observables import (
    GOLDEN_SITE, Aperture, Observable, Profile, default_aperture, digit_observable, evaluate, evaluate_many,
    integral_mean, make_observable, tail_law, tail_measure, truncated_mean, unit_ball_volume,
)
from modules.rng import make_rng


def test_unit_ball_volume():
    assert unit_ball_volume(1) == 2.0
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0)


def test_evaluate_examples():
    iid, torus = get_system("iid"), get_system("doubling")
    one_sided = make_observable(iid, beta=1.0, site=[0.0])
    assert evaluate(one_sided, iid, 0.5) == 2.0
    assert one_sided.aperture is Aperture.HALF

    two_sided = Observable(site=(0.5,), order_beta=2.0, profile=Profile.RADIAL, aperture=Aperture.FULL)
    assert evaluate(two_sided, torus, 0.6) == pytest.approx(100.0)

    wavy = Observable(site=(0.25,), order_beta=1.0, profile=Profile.OSCILLATORY, aperture=Aperture.FULL)
    g = 1.0 + 0.5 * math.cos(2.0 * math.pi * 0.35)
    assert evaluate(wavy, torus, 0.35) == pytest.approx(g / 0.1)


def test_evaluate_at_site_is_degenerate():
    iid = get_system("iid")
    obs = make_observable(iid, beta=1.0, site=[0.0])
    with pytest.raises(DegenerateHit):
        evaluate(obs, iid, 0.0)
    with pytest.raises(DegenerateHit):
        evaluate_many(obs, iid, np.array([[0.5], [0.0]]))


def test_evaluate_many_matches_scalar(seed):
    system = get_system("doubling")
    obs = make_observable(system, profile="oscillatory", beta=1.5)
    points, _ = generate_orbit(system, sample_initial(system, make_rng(seed)), 100)
    values, dists = evaluate_many(obs, system, points)
    for p, v, d in zip(points, values, dists):
        assert v == pytest.approx(evaluate(obs, system, p[0]), rel=1e-12)
        assert d == pytest.approx(system.metric(p[0], obs.site))


def test_digit_observable():
    gauss = get_system("gauss")
    obs = digit_observable(gauss)
    assert evaluate(obs, gauss, 0.4) == 2.0
    assert evaluate(obs, gauss, 0.99) == 1.0
    assert evaluate(obs, gauss, 0.01) == 100.0
    assert obs.residue == 1.0
    assert obs.aperture.factor * unit_ball_volume(1) == 1.0
    with pytest.raises(ConfigError):
        digit_observable(get_system("doubling"))


def test_make_observable_validation():
    system = get_system("doubling")
    with pytest.raises(ConfigError, match="profile"):
        make_observable(system, profile="spiky")
    with pytest.raises(ConfigError, match="beta"):
        make_observable(system, beta=-1.0)
    with pytest.raises(ConfigError, match="site"):
        make_observable(system, site=[0.5])
    obs = make_observable(system)
    assert obs.site == (GOLDEN_SITE,)
    assert obs.aperture is Aperture.FULL


def test_default_aperture():
    assert default_aperture(get_system("iid"), (0.0,)) is Aperture.HALF
    assert default_aperture(get_system("iid"), (0.3,)) is Aperture.FULL
    assert default_aperture(get_system("doubling"), (0.0,)) is Aperture.FULL


def test_tail_measure_examples():
    iid, torus, gauss = get_system("iid"), get_system("doubling"), get_system("gauss")
    assert tail_measure(make_observable(iid, beta=2.0, site=[0.0]), iid, 4.0) == pytest.approx(0.5)
    assert tail_measure(make_observable(torus, beta=1.0), torus, 10.0) == pytest.approx(0.2)
    assert tail_measure(digit_observable(gauss), gauss, 2.0) == pytest.approx(math.log2(1.5))
    with pytest.raises(ValueError):
        tail_measure(make_observable(torus), torus, 0.0)


def test_tail_measure_oscillatory_matches_sampling(seed):
    system = get_system("doubling")
    obs = make_observable(system, profile="oscillatory", beta=1.0)
    x = make_rng(seed).random(400_000).reshape(-1, 1)
    values, _ = evaluate_many(obs, system, x)
    for t in (3.0, 30.0, 300.0):
        p = tail_measure(obs, system, t)
        freq = np.mean(values > t)
        assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / x.shape[0]) + 1e-6


def test_tail_law_leading_order():
    system = get_system("doubling")
    obs = make_observable(system, beta=1.0)
    law = tail_law(obs, system)
    assert law.tail(100.0) == pytest.approx(tail_measure(obs, system, 100.0))


def test_epsilon_bound():
    system = get_system("doubling")
    assert make_observable(system).epsilon_bound(0.1) == 0.0
    wavy = make_observable(system, profile="oscillatory")
    for r in (0.01, 0.001):
        h = np.linspace(-r, r, 101)
        ratio = wavy.residue_profile(GOLDEN_SITE + h) / wavy.residue
        assert np.all(np.abs(ratio - 1.0) <= wavy.epsilon_bound(r) + 1e-15)


def test_truncated_mean_closed_forms():
    iid = get_system("iid")
    obs = make_observable(iid, beta=0.75, site=[0.0])
    assert integral_mean(obs, iid) == pytest.approx(4.0)
    assert truncated_mean(obs, iid, 0.01) == pytest.approx(4.0 * (1.0 - 0.01 ** 0.25))
    one = make_observable(iid, beta=1.0, site=[0.0])
    assert truncated_mean(one, iid, 1e-3) == pytest.approx(math.log(1e3))
    assert math.isinf(integral_mean(one, iid))


def test_truncated_mean_gauss_digits():
    gauss = get_system("gauss")
    obs = digit_observable(gauss)
    # sum_j mu(r < x <= 1/j) at r = 0.2: j = 1..5
    expected = sum(math.log2((1.0 + 1.0 / j) / 1.2) for j in range(1, 6))
    assert truncated_mean(obs, gauss, 0.2) == pytest.approx(expected)


def test_truncated_mean_quadrature_agrees_with_closed_form():
    torus = get_system("doubling")
    radial = make_observable(torus, beta=0.75)
    wavy = make_observable(torus, profile="oscillatory", beta=0.75)
    r = 1e-3
    closed = truncated_mean(radial, torus, r)
    assert closed == pytest.approx(2.0 * 4.0 * (0.5 ** 0.25 - r ** 0.25))
    # g = 1 + 0.5 cos(2 pi x): the radial part plus a cosine term, summed on a fine log grid
    h = np.geomspace(r, 0.5, 200_001)
    cosine = sum(trapezoid(np.cos(2 * np.pi * (GOLDEN_SITE + s * h)) * h ** -0.75, h) for s in (-1, 1))
    assert truncated_mean(wavy, torus, r) == pytest.approx(closed + 0.5 * cosine, rel=1e-4)


def test_truncated_mean_catmap_radial():
    cat = get_system("catmap")
    obs = make_observable(cat, beta=1.0)
    # mean over the torus minus the disc part: polar integral of rho^-1 over r < rho < 1/2 is 2 pi (1/2 - r)
    r = 0.01
    inside = 2.0 * math.pi * (0.5 - r)
    full = truncated_mean(obs, cat, r)
    assert full > inside
    assert full - inside == pytest.approx(truncated_mean(obs, cat, 0.5), rel=1e-6)


def test_ball_measure_gives_tail_for_radial():
    system = get_system("catmap")
    obs = make_observable(system, beta=2.0)
    t = 50.0
    assert tail_measure(obs, system, t) == pytest.approx(ball_measure(system, obs.site, t ** -0.5))


@pytest.mark.parametrize("name, beta, site, t", [
    ("iid", 2.0, [0.0], 4.0),
    ("iid", 1.0, [0.3], 10.0),
    ("doubling", 1.5, None, 100.0),
    ("catmap", 3.0, None, 1000.0),
])
def test_radial_tail_halves_when_t_scales_by_two_to_alpha(name, beta, site, t):
    system = get_system(name)
    obs = make_observable(system, beta=beta, site=site)
    ratio = tail_measure(obs, system, t) / tail_measure(obs, system, 2.0 ** obs.alpha * t)
    assert ratio == pytest.approx(2.0, rel=1e-9)


def test_half_aperture_is_half_the_full_ball():
    iid = get_system("iid")
    edge = make_observable(iid, beta=1.0, site=[0.0])
    inner = make_observable(iid, beta=1.0, site=[0.5])
    assert edge.aperture is Aperture.HALF
    assert inner.aperture is Aperture.FULL
    for t in (3.0, 10.0, 1000.0):
        assert tail_measure(edge, iid, t) == pytest.approx(0.5 * tail_measure(inner, iid, t))
    assert tail_law(edge, iid).tail_constant == pytest.approx(0.5 * tail_law(inner, iid).tail_constant)


def test_digit_tail_matches_gauss_measure(seed):
    gauss = get_system("gauss")
    obs = digit_observable(gauss)
    for n in (2, 10, 10_000):
        assert tail_measure(obs, gauss, float(n)) == pytest.approx(math.log2(1.0 + 1.0 / n))
    assert tail_law(obs, gauss).tail(1e4) == pytest.approx(tail_measure(obs, gauss, 1e4), rel=1e-3)
    rng = make_rng(seed)
    xs = np.array([sample_initial(gauss, rng).x for _ in range(100_000)])
    digits = np.floor(1.0 / xs)
    for n in (1, 2, 5, 20):
        p = tail_measure(obs, gauss, float(n))
        assert abs(np.mean(digits >= n) - p) < 4 * math.sqrt(p * (1 - p) / xs.size) + 1e-9
