import math

import pytest

from modules.dynsys import get_system
from modules.errors import WrongRegime
from modules.limits import (
    LawKind, Normalization, Theorem, dlt_inter_asymptotic_centering, dlt_inter_normalization,
    dlt_light_normalization, geometry, lambda_cut, normal_law, poisson_radius, slln_inter_constant,
    slln_light_constant,
)
from modules.observables import digit_observable, make_observable


def _iid_one_sided(beta):
    system = get_system("iid")
    obs = make_observable(system, beta=beta, site=[0.0])
    return obs, system, geometry(obs, system)


def _doubling(beta, profile="radial"):
    system = get_system("doubling")
    obs = make_observable(system, profile=profile, beta=beta)
    return obs, system, geometry(obs, system)


def test_slln_light_constants():
    assert slln_light_constant(_iid_one_sided(1.0)[2]) == pytest.approx(1.0)
    gauss = get_system("gauss")
    assert slln_light_constant(geometry(digit_observable(gauss), gauss)) == pytest.approx(1.0 / math.log(2.0))
    assert slln_light_constant(_doubling(1.0)[2]) == pytest.approx(2.0)
    with pytest.raises(WrongRegime):
        slln_light_constant(_doubling(2.0)[2], alpha=2.0)


def test_slln_inter_constants():
    assert slln_inter_constant(_iid_one_sided(2.0)[2], 2.0) == pytest.approx(1.0)
    assert slln_inter_constant(_doubling(2.0)[2], 2.0) == pytest.approx(4.0)
    with pytest.raises(WrongRegime):
        slln_inter_constant(_doubling(1.0)[2], 1.0)


def test_catmap_geometry():
    system = get_system("catmap")
    geom = geometry(make_observable(system, beta=2.0), system)
    assert geom.B_d == pytest.approx(math.pi)
    assert geom.ball_mass == pytest.approx(math.pi)
    assert geom.to_dict()["ball_mass"] == pytest.approx(math.pi)


def test_dlt_inter_variance():
    obs, system, geom = _doubling(2.0)
    _, _, sigma2 = dlt_inter_normalization(geom, 2.0, 10 ** 6, 100)
    assert sigma2 == pytest.approx(4.0 / 3.0)
    _, _, sigma2 = dlt_inter_normalization(geom, 0.75, 10 ** 6, 100)
    assert sigma2 == pytest.approx(3.0)
    with pytest.raises(WrongRegime):
        dlt_inter_normalization(geom, 0.5, 10 ** 6, 100)


def test_dlt_inter_scale():
    obs, system, geom = _doubling(2.0)
    N, k = 10 ** 6, 63
    _, b_N, _ = dlt_inter_normalization(geom, 2.0, N, k)
    assert b_N == pytest.approx(4.0 * N ** 2 * k ** -1.5)


def test_dlt_inter_centering_regimes():
    # alpha < 1: a_N = 4 N (1 - (k/N)^(1/4)), slowly approaching N times the integral of f
    obs, system, geom = _iid_one_sided(0.75)
    N = 10 ** 8
    k = math.ceil(N ** 0.4)
    a_N, _, _ = dlt_inter_normalization(geom, 0.75, N, k, obs, system)
    assert a_N == pytest.approx(4.0 * N * (1.0 - (k / N) ** 0.25), rel=1e-6)
    assert dlt_inter_asymptotic_centering(geom, 0.75, N, k, integral=4.0) == pytest.approx(a_N, rel=0.1)

    # alpha = 1, k = sqrt(N): a_N = N log(N/k) exactly for the one-sided 1/x
    obs, system, geom = _iid_one_sided(1.0)
    k = math.ceil(N ** 0.5)
    a_N, _, _ = dlt_inter_normalization(geom, 1.0, N, k, obs, system)
    assert a_N == pytest.approx(N * math.log(N / k), rel=1e-9)
    assert dlt_inter_asymptotic_centering(geom, 1.0, N, k) == pytest.approx(a_N, rel=0.01)

    # alpha > 1
    obs, system, geom = _doubling(2.0)
    k = math.ceil(N ** 0.4)
    a_N, _, _ = dlt_inter_normalization(geom, 2.0, N, k, obs, system)
    assert dlt_inter_asymptotic_centering(geom, 2.0, N, k) == pytest.approx(a_N, rel=0.01)


def test_dlt_inter_without_system_has_no_centering():
    _, _, geom = _doubling(2.0)
    a_N, _, _ = dlt_inter_normalization(geom, 2.0, 1000, 10)
    assert math.isnan(a_N)


def test_dlt_light_regimes():
    # 1/2 < alpha < 1: a_N / N -> integral of f
    obs, system, geom = _iid_one_sided(0.75)
    N = 10 ** 10
    d = dlt_light_normalization(geom, 0.75, N, 1e4, obs, system)
    assert d["a_N"] / N == pytest.approx(4.0, rel=0.01)
    assert d["scale"] == pytest.approx(N ** 0.75)

    # alpha = 1: a_N / (N log N) -> Res B_d rho (one-sided: 1)
    obs, system, geom = _iid_one_sided(1.0)
    d = dlt_light_normalization(geom, 1.0, N, 1e4, obs, system)
    assert d["a_N"] / (N * math.log(N)) == pytest.approx(1.0, rel=0.01)

    # alpha > 1: no centering constant, bounded a_N / N^alpha
    obs, system, geom = _doubling(2.0)
    d = dlt_light_normalization(geom, 2.0, N, 1e4, obs, system)
    assert d["c_R"] == 0.0
    assert d["coupling"] == pytest.approx(4.0)
    assert d["a_N"] / N ** 2 < 1e-3

    with pytest.raises(WrongRegime):
        dlt_light_normalization(geom, 0.4, N, 1e4)
    with pytest.raises(ValueError):
        dlt_light_normalization(geom, 2.0, N, 1.0)


def test_poisson_radius():
    _, _, geom = _doubling(1.0)
    assert poisson_radius(geom, 10 ** 6, 1.0) == pytest.approx(5e-7)
    assert poisson_radius(geom, 10 ** 6, 0.0) == 0.0
    assert poisson_radius(geom, 10 ** 6, 4.0) == pytest.approx(4.0 * poisson_radius(geom, 10 ** 6, 1.0))


def test_lambda_cut():
    _, _, geom = _iid_one_sided(2.0)
    assert lambda_cut(geom, 2.0, 100, 1) == pytest.approx(1e4)

    obs, system, geom = _doubling(1.0)
    # the superlevel set {f > 2000} is the ball of radius 1/2000, mass 10^-3
    assert lambda_cut(geom, 1.0, 1000, 1) == pytest.approx(2000.0)
    with pytest.raises(ValueError):
        lambda_cut(geom, 1.0, 10, 10)


def test_lambda_cut_oscillatory_solves_tail_identity():
    from modules.observables import tail_measure

    obs, system, geom = _doubling(1.0, profile="oscillatory")
    lam = lambda_cut(geom, 1.0, 10 ** 5, 100, obs, system)
    assert tail_measure(obs, system, lam) == pytest.approx(1e-3, rel=1e-8)


def test_normalization_applies_affine_map():
    norm = Normalization(Theorem.DLT_INTER, 100, 10.0, 2.0, normal_law(1.5))
    assert norm.normalize(14.0) == 2.0
    assert norm.limit.kind is LawKind.NORMAL
    assert norm.limit.label() == "N(0,1.5)"
