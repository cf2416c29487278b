import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wendy_irls.models import get_benchmark
from wendy_irls.simulate import (
    DivergenceError,
    StateGrid,
    integrate,
    integrate_many,
    read_csv,
    true_grid,
    write_csv,
)


def logistic_exact(t, u0=0.01):
    return u0 * np.exp(t) / (1 + u0 * (np.exp(t) - 1))


def test_logistic_matches_closed_form():
    m = get_benchmark("logistic")
    g = integrate(m, m.true_params, m.u0, 0.0, 10.0, 102)
    assert g.states[-1, 0] == pytest.approx(0.99552, abs=1e-5)
    np.testing.assert_allclose(g.states[:, 0], logistic_exact(g.times), atol=1e-6)


def test_row_zero_is_u0_and_shape():
    m = get_benchmark("ptb")
    g = true_grid(m)
    np.testing.assert_array_equal(g.states[0], m.u0)
    assert g.states.shape == (205, 5) and g.n_points == 205 and g.M == 204


@pytest.mark.parametrize("name", ["logistic", "lv", "fhn", "hmr", "ptb"])
def test_zero_parameters_give_constant_trajectory(name):
    m = get_benchmark(name)
    g = integrate(m, np.zeros((m.J, m.d)), m.u0, 0.0, 1.0, 10)
    np.testing.assert_array_equal(g.states, np.tile(m.u0, (11, 1)))


def test_rk4_self_convergence_lotka_volterra():
    m = get_benchmark("lv")
    ends = [integrate(m, m.true_params, m.u0, 0, 5, 204, substeps=s).states[-1] for s in (2, 4, 8)]
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    assert 8 <= ratio <= 32


def test_grid_times_are_not_accumulated():
    g = StateGrid(0.1, 0.1, np.zeros((1001, 1)))
    np.testing.assert_array_equal(g.times, 0.1 + np.arange(1001) * 0.1)
    assert g.T == pytest.approx(100.1)


def test_argument_checks():
    m = get_benchmark("logistic")
    with pytest.raises(ValueError):
        integrate(m, m.true_params, m.u0, 1.0, 1.0, 10)
    with pytest.raises(ValueError):
        integrate(m, m.true_params, m.u0, 0.0, 1.0, 1)
    with pytest.raises(ValueError):
        integrate(m, m.true_params, m.u0, 0.0, 1.0, 10, substeps=0)


def test_blow_up_raises_with_time():
    m = get_benchmark("logistic")
    # du/dt = u^2 from u0 = 1 blows up at t = 1
    with pytest.raises(DivergenceError) as exc:
        integrate(m, np.array([[0.0], [1.0]]), [1.0], 0.0, 2.0, 20)
    assert 0.9 < exc.value.time <= 2.0


def test_csv_roundtrip_is_exact(tmp_path):
    g = true_grid(get_benchmark("lv"))
    p = tmp_path / "traj.csv"
    write_csv(g, p)
    assert p.read_text().splitlines()[0] == "t,u1,u2"
    back = read_csv(p)
    np.testing.assert_array_equal(back.states, g.states)
    assert back.t0 == g.t0 and back.dt == pytest.approx(g.dt, rel=1e-15)


def test_csv_rejects_nonuniform_grid(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,u1\n0,1\n1,1\n3,1\n")
    with pytest.raises(ValueError):
        read_csv(p)


def test_batch_integration_matches_single():
    m = get_benchmark("fhn")
    Ws = np.stack([m.true_params, 1.1 * m.true_params])
    states, div = integrate_many(m, Ws, m.u0, 0.0, 5.0, 40)
    assert not div.any()
    for k in range(2):
        np.testing.assert_allclose(states[k], integrate(m, Ws[k], m.u0, 0.0, 5.0, 40).states, rtol=1e-13, atol=1e-14)


def test_batch_integration_flags_divergent_members():
    m = get_benchmark("logistic")
    Ws = np.stack([m.true_params, np.array([[0.0], [1.0]])])
    states, div = integrate_many(m, Ws, [1.0], 0.0, 2.0, 20)
    assert div.tolist() == [False, True]
    assert np.all(np.isfinite(states[0])) and np.isnan(states[1, -1]).all()


@settings(max_examples=25, deadline=None)
@given(u0=st.floats(0.001, 0.9), T=st.floats(1.0, 12.0))
def test_logistic_closed_form_property(u0, T):
    m = get_benchmark("logistic")
    g = integrate(m, m.true_params, [u0], 0.0, T, 50)
    np.testing.assert_allclose(g.states[:, 0], logistic_exact(g.times, u0), atol=1e-6)
