import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from mfw.errors import BlowUp, ConfigurationError
from mfw.field import Field
from mfw.models import (Affine, CahnHilliard, FastOperatorSpec, LinearClipped, LinearDiagnostic, ModelSpec,
                        NoiseSpec, PorousMedium)
from mfw.paths import (ScaleParams, SlowFastState, TimeGrid, WienerDriver, guard, iter_normals,
                       simulate_auxiliary, simulate_coupled, simulate_frozen, stable_dt, step_controlled,
                       step_coupled)
from mfw.rng import FAST, SLOW


def drv(model, n_paths=1, seed=7):
    return WienerDriver.ensemble(seed, n_paths, model.noise_slow.n_modes, model.noise_fast.n_modes)


def single(model, path=0, seed=7):
    return WienerDriver(seed, path, model.noise_slow.n_modes, model.noise_fast.n_modes)


# ---------------------------------------------------------------- time grid

def test_time_grid_validation():
    with pytest.raises(ConfigurationError):
        TimeGrid(1.0, 0.3)
    with pytest.raises(ConfigurationError):
        TimeGrid(1.0, 0.1, zeta=0.25)
    with pytest.raises(ConfigurationError):
        TimeGrid(1.0, 0.1, zeta=2.0)
    g = TimeGrid(1.0, 0.01, 0.1)
    assert g.n_steps == 100 and g.steps_per_block == 10 and g.n_blocks == 10
    assert list(g.block_start([0, 9, 10, 25])) == [0, 0, 10, 20]


@settings(max_examples=40)
@given(st.floats(1e-4, 0.5), st.floats(0.1, 3.0))
def test_for_scales_contract(delta, T):
    g = TimeGrid.for_scales(T, delta)
    assert g.dt <= delta / 20 * (1 + 1e-12)
    assert g.dt <= g.zeta <= g.T * (1 + 1e-12)
    k = g.zeta / g.dt
    assert abs(k - round(k)) < 1e-6
    g.check_fast_resolution(delta)
    # t(zeta) always lies on the mesh
    steps = np.arange(g.n_steps + 1)
    assert np.all(g.block_start(steps) <= steps)


def test_dt_rule_violation_names_rule():
    with pytest.raises(ConfigurationError, match="delta/20"):
        TimeGrid(1.0, 0.01).check_fast_resolution(0.1)


def test_scale_params():
    s = ScaleParams(0.1, 0.01)
    assert s.ratio == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        ScaleParams(0.0, 1.0)


# ---------------------------------------------------------------- coupled stepping

def test_zero_drift_zero_noise_is_stationary():
    m = ModelSpec(slow=LinearDiagnostic(0.0), noise_slow=NoiseSpec((0.0,)), noise_fast=NoiseSpec((0.0,)))
    x0 = Field(np.linspace(-1, 1, 8), m.slow_grid)
    s = SlowFastState(x0, m.fast_grid.zeros())
    g = TimeGrid(0.1, 0.001)
    for _ in range(5):
        s = step_coupled(s, m, ScaleParams(1.0, 0.02), g, single(m))
    assert s.x == x0 and s.y == m.fast_grid.zeros()
    assert s.t == pytest.approx(0.005)


def test_scalar_reduction_mean_decay():
    # n = 2, heat slow drift, no coupling: E X_t = exp(A t) x0 along each mode.
    m = ModelSpec(slow=LinearDiagnostic(1.0), n_interior=2, noise_slow=NoiseSpec((1.0,)),
                  noise_fast=NoiseSpec((1.0,)))
    lam1 = -m.slow_grid.eigenvalues()[0]
    e1 = m.slow_grid.eigenmodes()[0]
    x0 = 2.0 * e1
    g = TimeGrid(0.2, 2e-4)
    P = 10_000
    x, _ = simulate_coupled(m, ScaleParams(1.0, 0.004), g, drv(m, P), x0, np.zeros(2))
    c = m.slow_grid.to_modes(x)[:, 0]
    exact = 2.0 * np.exp(-lam1 * g.T)
    se = c.std(ddof=1) / np.sqrt(P)
    assert abs(c.mean() - exact) < 3 * se


def test_replay_is_bit_identical():
    m = ModelSpec(slow=CahnHilliard(1.0, -1.0), fast=FastOperatorSpec(c1=1.0, c2=1.0, g=Affine(x_gain=0.5)),
                  coupling=Affine(F=1.0), noise_slow=NoiseSpec((1.0, 0.5), LinearClipped(0.5, 2.0)),
                  noise_fast=NoiseSpec((1.0, 0.5)))
    g = TimeGrid.for_scales(0.05, 0.01)
    sc = ScaleParams(0.1, 0.01)
    x0 = 0.3 * m.slow_grid.nodes
    a, b = simulate_coupled(m, sc, g, drv(m, 16), x0, np.zeros(8))
    a2, b2 = simulate_coupled(m, sc, g, drv(m, 16), x0, np.zeros(8))
    assert np.array_equal(a, a2) and np.array_equal(b, b2)
    # a single path replayed alone matches its slot in the ensemble
    a5, b5 = simulate_coupled(m, sc, g, drv(m, 16).subset([5]), x0, np.zeros(8))
    assert np.array_equal(a5[0], a[5]) and np.array_equal(b5[0], b[5])


def test_state_stepping_matches_batched():
    m = ModelSpec(fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=1.0)), coupling=Affine(F=1.0),
                  noise_slow=NoiseSpec((1.0, 0.5)), noise_fast=NoiseSpec((0.7,)))
    g = TimeGrid(0.01, 0.001)
    sc = ScaleParams(0.5, 0.02)
    x0 = np.sin(np.pi * m.slow_grid.nodes)
    s = SlowFastState(Field(x0, m.slow_grid), m.fast_grid.zeros())
    for _ in range(g.n_steps):
        s = step_coupled(s, m, sc, g, single(m, path=3))
    x, y = simulate_coupled(m, sc, g, drv(m, 4), x0, np.zeros(8))
    np.testing.assert_allclose(s.x.values, x[3], rtol=0, atol=1e-14)
    np.testing.assert_allclose(s.y.values, y[3], rtol=0, atol=1e-14)


def test_zero_control_equals_uncontrolled():
    m = ModelSpec(coupling=Affine(F=1.0), noise_slow=NoiseSpec((1.0, 0.5)), noise_fast=NoiseSpec((1.0,)))
    g = TimeGrid(0.02, 0.001)
    sc = ScaleParams(0.3, 0.02)
    phi = np.zeros((g.n_steps, 3))
    a = simulate_coupled(m, sc, g, drv(m, 8), np.ones(8), np.zeros(8))
    b = simulate_coupled(m, sc, g, drv(m, 8), np.ones(8), np.zeros(8), control=phi)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_constant_control_adds_exact_drift():
    m = ModelSpec(slow=LinearDiagnostic(0.0), noise_slow=NoiseSpec((1.0, 0.5)), noise_fast=NoiseSpec((1.0,)))
    g = TimeGrid(0.001, 0.001)
    sc = ScaleParams(1.0, 0.02)
    phi = np.array([[0.7, -1.3, 0.0]])
    s0 = SlowFastState(m.slow_grid.zeros(), m.fast_grid.zeros())
    a = step_coupled(s0, m, sc, g, single(m))
    b = step_controlled(s0, m, sc, g, single(m), phi)
    e = m.slow_grid.eigenmodes()
    expect = g.dt * (1.0 * 0.7 * e[0] + 0.5 * -1.3 * e[1])
    np.testing.assert_allclose(b.x.values - a.x.values, expect, atol=1e-15)


def test_control_response_matches_linear_ode():
    # Additive noise: the controlled-minus-uncontrolled difference is deterministic.
    m = ModelSpec(slow=LinearDiagnostic(1.0), noise_slow=NoiseSpec((0.8,)), noise_fast=NoiseSpec((1.0,)))
    lam1 = -m.slow_grid.eigenvalues()[0]
    g = TimeGrid(0.5, 1e-4)
    sc = ScaleParams(0.2, 0.002)
    phi = np.zeros((g.n_steps, 2))
    phi[:, 0] = 1.5
    a, _ = simulate_coupled(m, sc, g, drv(m, 4), np.zeros(8), np.zeros(8))
    b, _ = simulate_coupled(m, sc, g, drv(m, 4), np.zeros(8), np.zeros(8), control=phi)
    shift = m.slow_grid.to_modes(b - a)
    # implicit Euler recursion, exact
    disc = 0.8 * 1.5 * g.dt * sum((1 + lam1 * g.dt) ** -(k + 1) for k in range(g.n_steps))
    np.testing.assert_allclose(shift[:, 0], disc, rtol=1e-9)
    np.testing.assert_allclose(shift[:, 1:], 0.0, atol=1e-12)
    cont = 0.8 * 1.5 * (1 - np.exp(-lam1 * g.T)) / lam1
    assert shift[0, 0] == pytest.approx(cont, rel=2e-3)


def test_weak_order_refinement():
    # For linear additive dynamics the mean follows the noise-free recursion.
    m = ModelSpec(slow=LinearDiagnostic(1.0), n_interior=2, noise_slow=NoiseSpec((0.0,)),
                  noise_fast=NoiseSpec((0.0,)))
    lam1 = -m.slow_grid.eigenvalues()[0]
    e1 = m.slow_grid.eigenmodes()[0]
    errs = []
    for dt in (0.01, 0.005, 0.0025, 0.00125):
        g = TimeGrid(0.5, dt)
        x, _ = simulate_coupled(m, ScaleParams(1.0, 1.0), g, drv(m, 1), e1, np.zeros(2))
        errs.append(abs(m.slow_grid.to_modes(x)[0, 0] - np.exp(-lam1 * 0.5)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 1.5) & (ratios < 3.0))


def test_noise_streams_uncorrelated():
    d = WienerDriver.ensemble(3, 100_000, 1, 1)
    z1 = d.normals(SLOW, 0)[:, 0]
    z2 = d.normals(FAST, 0)[:, 0]
    assert abs(np.corrcoef(z1, z2)[0, 1]) < 4 / np.sqrt(z1.size)


def test_iter_normals_matches_block():
    d = WienerDriver.ensemble(11, 5, 2, 3)
    got = list(iter_normals(d, 7))
    blk1, blk2 = d.block(SLOW, 0, 7), d.block(FAST, 0, 7)
    for k, z1, z2 in got:
        assert np.array_equal(z1, blk1[k]) and np.array_equal(z2, blk2[k])


def test_blow_up_is_raised_with_step():
    with pytest.raises(BlowUp) as e:
        guard(17, np.array([1.0, 2e6]))
    assert e.value.step == 17
    with pytest.raises(BlowUp):
        guard(3, np.array([np.nan]))
    # explicit porous-medium flux far outside its stability bound
    m = ModelSpec(slow=PorousMedium(3), noise_slow=NoiseSpec((0.0,)))
    assert stable_dt(m, 5.0) < 0.01
    with pytest.raises(BlowUp):
        simulate_coupled(m, ScaleParams(1.0, 1.0), TimeGrid(5.0, 0.01), drv(m, 2), 5 * np.ones(8), np.zeros(8))


@pytest.mark.parametrize("eps", [1.0, 0.3, 0.05])
@pytest.mark.parametrize("kind", ["pm", "ch", "linear"])
def test_energy_guard_catalog(kind, eps):
    noise = NoiseSpec((1.0, 0.5, 0.25), LinearClipped(0.5, 2.0))
    slow = {"pm": PorousMedium(3), "ch": CahnHilliard(1.0, -1.0), "linear": LinearDiagnostic(1.0)}[kind]
    m = ModelSpec(slow=slow, fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=1.0)), coupling=Affine(x_gain=0.5, F=1.0),
                  noise_slow=noise, noise_fast=NoiseSpec((1.0, 0.5)))
    delta = eps**2
    T = 0.1
    g = TimeGrid.for_scales(T, delta, max_dt=stable_dt(m, 3.0))
    x0 = 0.5 * np.sin(np.pi * m.slow_grid.nodes)
    x, y = simulate_coupled(m, ScaleParams(eps, delta), g, drv(m, 1000), x0, np.zeros(8))
    assert np.all(np.isfinite(x)) and np.all(np.isfinite(y))


def test_stable_dt_values():
    assert stable_dt(ModelSpec(slow=LinearDiagnostic(1.0)), 10.0) == np.inf
    pm = ModelSpec(slow=PorousMedium(3, stabilization=1.0))
    assert stable_dt(pm, 0.5) == np.inf
    mu = -pm.slow_grid.eigenvalues().min()
    assert stable_dt(pm, 2.0) == pytest.approx(2.0 / (mu * (12.0 - 2.0)))


# ---------------------------------------------------------------- frozen and auxiliary

def linear_fast_model():
    return ModelSpec(fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=1.0, offset=0.5)),
                     noise_slow=NoiseSpec((1.0,)), noise_fast=NoiseSpec((1.0, 0.5)))


def test_frozen_linear_mean_matches_matrix_exponential():
    m = linear_fast_model()
    A = np.asarray(m.fast_grid.laplacian_matrix()) + m.fast.c1 * np.eye(8)
    x = np.cos(np.pi * m.slow_grid.nodes)
    y0 = 2.0 * np.sin(2 * np.pi * m.fast_grid.nodes)
    gx = m.g_values(x, np.zeros(8))
    t = 0.2
    Ainv_g = np.linalg.solve(A, gx)
    exact = -Ainv_g + linalg.expm(A * t) @ (y0 + Ainv_g)
    P = 10_000
    y = simulate_frozen(x, y0, m, t, 2e-4, drv(m, P), record_every=None)
    se = y.std(axis=0, ddof=1) / np.sqrt(P)
    assert np.all(np.abs(y.mean(axis=0) - exact) < 3 * se + 1e-12)


def test_frozen_fixed_point_is_stationary_without_noise():
    m = ModelSpec(fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=1.0, offset=0.5)), noise_fast=NoiseSpec((0.0,)))
    A = np.asarray(m.fast_grid.laplacian_matrix()) + np.eye(8)
    x = np.ones(8)
    ystar = -np.linalg.solve(A, m.g_values(x, np.zeros(8)))
    y = simulate_frozen(x, ystar, m, 1.0, 0.01, drv(m, 1), record_every=None)
    np.testing.assert_allclose(y[0], ystar, atol=1e-12)


def test_frozen_input_stability():
    m = linear_fast_model()
    lam1 = m.lambda1_fast
    rng = np.random.default_rng(0)
    for _ in range(10):
        x1, x2 = rng.normal(size=(2, 8))
        y1 = simulate_frozen(x1, np.zeros(8), m, 0.5, 1e-3, drv(m, 64), record_every=None)
        y2 = simulate_frozen(x2, np.zeros(8), m, 0.5, 1e-3, drv(m, 64), record_every=None)
        d = m.fast_h_norm(y1.mean(0) - y2.mean(0))
        bound = abs(m.fast.g.x_gain) / (lam1 - m.fast.c1) * m.fast_h_norm(x1 - x2)
        assert d <= bound * (1 + 1e-9)


def test_frozen_records_trajectory():
    m = linear_fast_model()
    tr = simulate_frozen(np.zeros(8), np.zeros(8), m, 0.1, 0.01, drv(m, 3), record_every=5)
    assert tr.y.shape == (3, 3, 8)
    np.testing.assert_allclose(tr.times, [0.0, 0.05, 0.1])


def test_auxiliary_with_constant_slow_path_equals_rescaled_frozen():
    m = linear_fast_model()
    sc = ScaleParams(0.5, 0.01)
    g = TimeGrid(0.05, 0.0005, 0.01)
    x = np.sin(np.pi * m.slow_grid.nodes)
    snaps = np.broadcast_to(x, (g.n_blocks, 8))
    yh = simulate_auxiliary(snaps, np.zeros(8), m, sc, g, drv(m, 32))
    yf = simulate_frozen(x, np.zeros(8), m, g.T / sc.delta, g.dt / sc.delta, drv(m, 32), record_every=None)
    np.testing.assert_allclose(yh, yf, rtol=0, atol=1e-13)


def test_auxiliary_single_block_uses_initial_state():
    m = linear_fast_model()
    sc = ScaleParams(0.5, 0.01)
    g = TimeGrid(0.02, 0.0005, 0.02)
    snaps = np.stack([np.ones(8)])
    y1 = simulate_auxiliary(snaps, np.zeros(8), m, sc, g, drv(m, 4))
    y2 = simulate_auxiliary(np.concatenate([snaps, 5 + snaps]), np.zeros(8), m, sc, g, drv(m, 4))
    assert np.array_equal(y1, y2)


def test_auxiliary_coincides_with_coupled_when_slow_state_is_constant():
    m = ModelSpec(slow=LinearDiagnostic(0.0), fast=FastOperatorSpec(c1=1.0, g=Affine(x_gain=1.0)),
                  noise_slow=NoiseSpec((0.0,)), noise_fast=NoiseSpec((1.0, 0.5)))
    sc = ScaleParams(0.5, 0.01)
    g = TimeGrid(0.05, 0.0005, 0.01)
    x0 = np.cos(np.pi * m.slow_grid.nodes)
    x, y = simulate_coupled(m, sc, g, drv(m, 8), x0, np.zeros(8))
    np.testing.assert_array_equal(x, np.broadcast_to(x0, x.shape))
    yh = simulate_auxiliary(np.broadcast_to(x0, (g.n_blocks, 8)), np.zeros(8), m, sc, g, drv(m, 8))
    assert np.array_equal(y, yh)


def test_driver_mode_mismatch_rejected():
    m = linear_fast_model()
    with pytest.raises(ConfigurationError):
        simulate_coupled(m, ScaleParams(1, 1), TimeGrid(0.1, 0.01), WienerDriver.ensemble(0, 2, 3, 3),
                         np.zeros(8), np.zeros(8))
