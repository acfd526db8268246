import csv
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import jv

from lrbqfi.dynamics import Propagator, build_xy_hamiltonian, hopping_matrix
from lrbqfi.fisher import ImpulsePipeline
from lrbqfi.hilbert import LocalOperatorSpec
from lrbqfi.xy_analytic import (
    FiniteChain,
    LightConeGrid,
    bessel_j,
    bessel_j_orders,
    bessel_j_series,
    dominant_eigenvalue_curve,
    lightcone_grid,
    miller_start,
    receiver_closed_form,
    receiver_small_theta,
    single_excitation_amplitudes,
)

GOLDEN = Path(__file__).parent / "data" / "fig3_receiver_n100_t52.csv"

# max |small_theta - closed_form| at theta=0.05, n=10, t=5
SMALL_THETA_GAP = 1.7281865689777742e-05
# gap / theta^3 fitted at theta -> 0 for n=10, t=5
SMALL_THETA_CUBIC = 0.1383


# --- Bessel ------------------------------------------------------------------


def test_j0_at_zero():
    assert bessel_j(0, 0.0) == 1.0


@pytest.mark.parametrize("n", [1, 2, 7, 50])
def test_jn_at_zero(n):
    assert bessel_j(n, 0.0) == 0.0


def test_j0_of_two_against_series():
    assert abs(bessel_j(0, 2.0) - bessel_j_series(0, 2.0)) < 1e-14


def test_series_oracle_against_mpmath_besselj():
    import mpmath

    assert abs(bessel_j_series(3, 2.0) - float(mpmath.besselj(3, 2.0))) < 1e-15


@pytest.mark.parametrize("n", [0, 1, 5, 20])
@pytest.mark.parametrize("x", [0.5, 2.0, 7.3, 10.0])
def test_against_series(n, x):
    assert abs(bessel_j(n, x) - bessel_j_series(n, x)) < 1e-12


def test_against_scipy_wide_window():
    rng = np.random.default_rng(0)
    xs = rng.uniform(0, 500, 300)
    for n in (0, 1, 10, 99, 250, 500):
        assert np.abs(bessel_j(n, xs) - jv(n, xs)).max() < 1e-12


def test_negative_order_symmetry():
    assert bessel_j(-3, 4.2) == -bessel_j(3, 4.2)
    assert bessel_j(-4, 4.2) == bessel_j(4, 4.2)


def test_out_of_window():
    with pytest.raises(ValueError):
        bessel_j(501, 1.0)
    with pytest.raises(ValueError):
        bessel_j(2, 500.5)
    with pytest.raises(ValueError):
        bessel_j(2, -1.0)


def test_recurrence_residual():
    xs = np.linspace(0.5, 120, 240)
    j = bessel_j_orders(121, xs)
    for n in range(1, 121):
        resid = j[n - 1] + j[n + 1] - 2 * n / xs * j[n]
        assert np.abs(resid).max() < 1e-10


@pytest.mark.parametrize("x", [0.1, 3.0, 40.0, 150.0])
def test_sum_of_squares(x):
    j = bessel_j_orders(200, x)
    assert abs(j[0] ** 2 + 2 * np.sum(j[1:] ** 2) - 1) < 1e-12


def test_start_order_is_even_and_past_argument():
    m = miller_start(10, 80.0)
    assert m % 2 == 0 and m > 80


def test_fixed_start_gives_identical_values():
    xs = np.linspace(0, 100, 11)
    start = miller_start(60, 100.0)
    a = bessel_j_orders(60, xs, start=start)[40]
    b = bessel_j_orders(40, xs, start=start)[40]
    assert np.array_equal(a, b)


# --- single-excitation amplitudes ----------------------------------------------


def test_amplitudes_at_t0():
    amps = single_excitation_amplitudes(0.0)
    assert amps.at(0) == 1 and amps.total_weight() == 1


def test_infinite_amplitudes_unitary_and_phase():
    amps = single_excitation_amplitudes(3.7)
    assert abs(amps.total_weight() - 1) < 1e-10
    for n in (-3, 2, 5):
        assert abs(amps.at(n) - (-1j) ** abs(n) * jv(abs(n), 7.4)) < 1e-13


def test_infinite_phase_matches_large_chain():
    t, n_sites = 2.0, 61
    fin = single_excitation_amplitudes(t, FiniteChain(n_sites, 30))
    inf = single_excitation_amplitudes(t)
    for n in range(-6, 7):
        assert abs(fin.at(n) - inf.at(n)) < 1e-12


def test_finite_chain_is_hopping_exponential():
    from scipy.linalg import expm

    amps = single_excitation_amplitudes(1.3, FiniteChain(7, 2))
    assert np.allclose(amps.amplitudes, expm(-1.3j * hopping_matrix(7))[:, 2])
    assert abs(amps.total_weight() - 1) < 1e-12


def test_nine_site_chain_deviates_by_the_image_term():
    # the nearest mirror images of a centred source sit 6 orders away
    fin = single_excitation_amplitudes(1.0, FiniteChain(9, 4))
    inf = single_excitation_amplitudes(1.0)
    gap = max(abs(abs(fin.at(n)) - abs(inf.at(n))) for n in range(-4, 5))
    assert abs(gap - abs(jv(6, 2.0))) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 20), st.floats(0, 10))
def test_finite_chain_converges(n, t):
    n_sites = 2 * (n + int(np.ceil(2 * t)) + 15) + 1
    fin = single_excitation_amplitudes(t, FiniteChain(n_sites, n_sites // 2))
    inf = single_excitation_amplitudes(t)
    assert abs(abs(fin.at(n)) - abs(inf.at(n))) < 1e-8


def test_peak_value_of_row_100():
    amps = single_excitation_amplitudes(50.0)
    assert abs(abs(amps.at(100)) ** 2 - jv(100, 100.0) ** 2) < 1e-14


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        single_excitation_amplitudes(-1.0)


# --- receiver state --------------------------------------------------------------


def test_closed_form_at_zero_theta_is_pure():
    rho = receiver_closed_form(0.0, 3.0, 4)
    assert np.array_equal(rho.matrix, np.diag([1.0, 0.0]).astype(complex))
    assert rho.purity() == 1.0


def test_closed_form_at_half_pi_is_diagonal():
    j2 = jv(5, 4.0) ** 2
    rho = receiver_closed_form(np.pi / 2, 2.0, 5).matrix
    assert np.allclose(rho, np.diag([1 - j2, j2]), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(0, 60), st.integers(1, 120))
def test_closed_form_is_a_state(theta, t, n):
    r = receiver_closed_form(theta, t, n)
    m = r.matrix
    assert np.abs(m - m.conj().T).max() < 1e-12
    assert abs(np.trace(m) - 1) < 1e-12
    assert r.eigenvalues().min() > -1e-10


def test_mixed_away_from_zero_theta():
    r = receiver_closed_form(0.4, 1.0, 2)
    assert r.purity() < 1 - 1e-3


def test_closed_form_needs_distance():
    with pytest.raises(ValueError):
        receiver_closed_form(0.1, 1.0, 0)


def test_closed_form_matches_nine_qubit_simulation():
    prop = Propagator.dense(build_xy_hamiltonian(9))
    pipe = ImpulsePipeline(prop, LocalOperatorSpec(0, "x"), 4)
    sim = pipe.receiver_state(0.3, 1.0)
    fin = single_excitation_amplitudes(1.0, FiniteChain(9, 0)).at(4)
    assert np.abs(sim - receiver_closed_form(0.3, 1.0, 4, amplitude=fin).matrix).max() < 1e-10
    # the Bessel form differs by the reflection off the chain end next to the source
    gap = np.abs(sim - receiver_closed_form(0.3, 1.0, 4).matrix).max()
    assert gap < 1e-3


def test_off_diagonal_sign_follows_simulation():
    # n = 4 keeps (-i)^n = 1, so the real default amplitude equals the simulated one
    prop = Propagator.dense(build_xy_hamiltonian(11))
    pipe = ImpulsePipeline(prop, LocalOperatorSpec(3, "x"), 7)
    sim = pipe.receiver_state(0.05, 0.6)
    rc = receiver_closed_form(0.05, 0.6, 4).matrix
    assert np.sign(sim[0, 1].imag) == np.sign(rc[0, 1].imag) == np.sign(jv(4, 1.2))
    assert np.abs(sim - rc).max() < 1e-6


def test_small_theta_at_zero():
    assert np.array_equal(receiver_small_theta(0.0, 2.0, 3).matrix, receiver_closed_form(0.0, 2.0, 3).matrix)


def test_small_theta_off_diagonal():
    th, t, n = 0.02, 1.7, 3
    m = receiver_small_theta(th, t, n).matrix
    assert abs(m[0, 1] - 1j * th * jv(n, 2 * t)) < 1e-15
    assert m[1, 0] == np.conj(m[0, 1])


def test_small_theta_pinned_gap():
    gap = np.abs(receiver_small_theta(0.05, 5.0, 10).matrix - receiver_closed_form(0.05, 5.0, 10).matrix).max()
    assert gap < 2 * (0.05 - np.sin(0.05)) + 4.2e-5
    assert abs(gap - SMALL_THETA_GAP) < 1e-15


def test_small_theta_error_is_cubic():
    thetas = np.array([0.005, 0.01, 0.02, 0.04])
    gaps = np.array([np.abs(receiver_small_theta(th, 5.0, 10).matrix
                            - receiver_closed_form(th, 5.0, 10).matrix).max() for th in thetas])
    slope = np.polyfit(np.log(thetas), np.log(gaps), 1)[0]
    assert abs(slope - 3) < 0.01
    assert abs(gaps[0] / thetas[0] ** 3 - SMALL_THETA_CUBIC) < 1e-3


def test_small_theta_warns_outside_window():
    with pytest.warns(UserWarning):
        receiver_small_theta(0.3, 1.0, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        receiver_small_theta(0.1, 1.0, 2)


# --- dominant eigenvalue -----------------------------------------------------------


def test_dominant_eigenvalue_at_zero():
    assert dominant_eigenvalue_curve(52.0, 100, [0.0])[0] == 1.0


def test_dominant_eigenvalue_even():
    grid = np.linspace(0, np.pi, 101)
    assert np.array_equal(dominant_eigenvalue_curve(52.0, 100, grid),
                          dominant_eigenvalue_curve(52.0, 100, -grid))


def test_dominant_eigenvalue_matches_eigh():
    grid = np.linspace(-np.pi, np.pi, 37)
    curve = dominant_eigenvalue_curve(3.1, 5, grid)
    for th, lam in zip(grid, curve):
        assert abs(lam - np.linalg.eigvalsh(receiver_closed_form(th, 3.1, 5).matrix)[-1]) < 1e-14


def test_dominant_eigenvalue_rejects_nan():
    with pytest.raises(ValueError):
        dominant_eigenvalue_curve(1.0, 2, [np.nan])


def test_fig3_golden_curve():
    with open(GOLDEN, newline="") as fh:
        rows = list(csv.DictReader(fh))
    thetas = np.array([float(r["theta"]) for r in rows])
    golden = np.array([float(r["dominant_eigenvalue"]) for r in rows])
    assert len(rows) == 629
    assert np.abs(dominant_eigenvalue_curve(52.0, 100, thetas) - golden).max() < 1e-14
    assert golden.min() == pytest.approx(1 - jv(100, 104.0) ** 2, abs=1e-12)


# --- light cone grid ---------------------------------------------------------------


def test_grid_origin():
    g = lightcone_grid((0, 3), (0, 1))
    assert g.values[0, 0] == 4.0


def test_grid_point_against_series():
    g = lightcone_grid((0, 20), (0.0, 5.0), 50)
    k = int(np.argmin(np.abs(g.t_values - 3.0)))
    assert abs(g.row(10)[k] - 4 * bessel_j_series(10, 6.0) ** 2) < 1e-13


def test_grid_default_spacing_and_range():
    g = lightcone_grid()
    assert g.values.shape == (101, 501)
    assert np.all((g.values >= 0) & (g.values <= 4))


def test_grid_depends_on_abs_n():
    g = lightcone_grid((-15, 15), (0, 8))
    assert np.array_equal(g.values, g.values[::-1])


def test_grid_independent_of_workers():
    a = lightcone_grid((0, 60), (0, 20), workers=1)
    b = lightcone_grid((0, 60), (0, 20), workers=4)
    assert np.array_equal(a.values, b.values)


def test_grid_csv_roundtrip(tmp_path):
    g = lightcone_grid((0, 5), (0, 2))
    path = tmp_path / "g.csv"
    text = g.to_csv(path)
    assert text.splitlines()[0] == "n,t,value"
    back = LightConeGrid.from_csv(path)
    assert np.array_equal(back.values, g.values)


def test_grid_row_100_onset():
    row = lightcone_grid((100, 100), (0, 50)).row(100)
    assert row[-1] / row[450] > 1e3
