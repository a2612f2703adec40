import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srbflow import map_model as mm
from srbflow.errors import SeriesNotConverging
from srbflow.linear_response import (contracted_series, lipschitz_probe, response_density,
                                     response_fd_check, second_order_probe)
from srbflow.transfer_op import TransferContext, srb_density


N = 256
CONST = mm.VecField.from_terms(1, [(0, (0,), 0.3, 0.0)])


def test_constant_field_on_doubling_has_no_response(doubling):
    res = response_density(TransferContext(doubling, N), CONST)
    assert np.abs(res.xi.values).max() < 1e-10


def test_zero_field_has_no_response(eps01):
    res = response_density(TransferContext(eps01, N), mm.VecField.zero(1))
    assert np.abs(res.xi.values).max() == 0.0
    assert res.terms_used == 0 and res.tail_bound == 0.0


def test_response_against_central_difference(eps01):
    ctx = TransferContext(eps01, N)
    g = mm.VecField.sine(1)
    res = response_density(ctx, g)
    h = 1e-3
    rp = srb_density(ctx.perturbed(g, h)).values
    rm = srb_density(ctx.perturbed(g, -h)).values
    assert np.abs(res.xi.values - (rp - rm) / (2 * h)).max() < 1e-4
    assert abs(res.xi.integral()) < 1e-12
    assert res.tail_bound < 1e-10


def test_fd_check_examples(doubling, eps01):
    assert response_fd_check(TransferContext(eps01, N), mm.VecField.zero(1)) == (0.0, 0.0, None)
    e1, e2, order = response_fd_check(TransferContext(eps01, N), mm.VecField.sine(1))
    assert 1.7 <= order <= 2.3
    e1, e2, _ = response_fd_check(TransferContext(doubling, N), CONST)
    assert e1 < 1e-10 and e2 < 1e-10


def test_second_order_probe_examples(eps005):
    ctx = TransferContext(eps005, N)
    g1 = mm.VecField.sine(1)
    g2 = mm.VecField.from_terms(1, [(0, (2,), 0.0, 1.0)])
    assert second_order_probe(ctx, mm.VecField.zero(1), g2) == 0.0
    r = second_order_probe(ctx, g1, g2)
    assert np.isfinite(r) and r > 0
    assert second_order_probe(ctx, 2.0 * g1, g2) == pytest.approx(r, rel=0.05)


def test_lipschitz_probe_examples(doubling, rng):
    gs = [mm.VecField.random(1, 3, rng) for _ in range(10)]
    assert lipschitz_probe(doubling, doubling, gs) == 0.0
    near = mm.add_scaled(doubling, 1.0, mm.VecField.sine(1, 1e-3))
    nearer = mm.add_scaled(doubling, 1.0, mm.VecField.sine(1, 1e-4))
    r3 = lipschitz_probe(doubling, near, gs)
    r4 = lipschitz_probe(doubling, nearer, gs)
    assert 0 < r3 < np.inf
    assert max(r3, r4) / min(r3, r4) < 3
    with pytest.raises(ValueError):
        lipschitz_probe(doubling, near, [mm.VecField.zero(1)])


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(0.05, 0.8), start=st.floats(0.1, 10.0))
def test_contracted_series_on_geometric_terms(rate, start):
    u0 = np.full(4, start)
    res = contracted_series(lambda u: rate * u, u0, rate, 1e-12)
    exact = start / (1 - rate)
    assert np.abs(res.total - exact).max() <= res.tail_bound + 1e-15 * exact
    assert res.tail_bound < 1e-11 * max(1.0, start)


def test_contracted_series_flags_slow_decay():
    with pytest.raises(SeriesNotConverging):
        contracted_series(lambda u: 0.99 * u, np.ones(3), 0.2, 1e-12)


@settings(max_examples=8, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(-1, 1))
def test_response_is_linear(a, b):
    ctx = TransferContext(mm.ExpandingMap.create([[2]], [(0, (1,), 0.0, 0.1)]), N)
    g1 = mm.VecField.sine(1)
    g2 = mm.VecField.from_terms(1, [(0, (2,), 0.4, 0.0)])
    xi = lambda g: response_density(ctx, g).xi.values
    combo = xi(a * g1 + b * g2) if (a or b) else np.zeros(N)
    assert np.abs(combo - a * xi(g1) - b * xi(g2)).max() < 1e-10


def test_tail_bound_is_honest(eps01):
    ctx = TransferContext(eps01, N)
    g = mm.VecField.sine(1)
    for tol in (1e-6, 1e-8, 1e-10):
        coarse = response_density(ctx, g, tol)
        fine = response_density(ctx, g, tol / 10)
        assert np.abs(coarse.xi.values - fine.xi.values).max() < coarse.tail_bound
