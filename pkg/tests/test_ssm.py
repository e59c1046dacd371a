import numpy as np
import pytest
from scipy.integrate import quad

from helpers import check_param_grads
from mamba_hawkes import autograd as ag
from mamba_hawkes.autograd import DomainError, Parameter, ShapeError, Tensor
from mamba_hawkes.ssm import (MambaBlock, SsmCore, discretize,
                              gated_decay_reference, selective_scan)


def naive_scan(x, delta, a, b, c, skip):
    """Independent step-by-step interpretation of the recurrence (plain numpy)."""
    L, D = x.shape
    N = a.shape[1]
    z = np.zeros((D, N))
    ys = []
    for i in range(L):
        u = delta[i] * a
        abar = np.exp(u)
        phi = np.where(np.abs(u) < 1e-4, 1 + u / 2 + u * u / 6, np.expm1(u) / u)
        z = abar * z + delta[i] * phi * b[i][None, :] * x[i][:, None]
        ys.append(z @ c[i] + (skip * x[i] if skip is not None else 0.0))
    return np.stack(ys)


# -- discretize --------------------------------------------------------------


def test_discretize_closed_form():
    abar, bbar = discretize(Tensor(np.array(np.log(2.0))), Tensor(np.array(-1.0)),
                            Tensor(np.array(1.0)))
    np.testing.assert_allclose(abar.data, 0.5, rtol=1e-15)
    np.testing.assert_allclose(bbar.data, 0.5, rtol=1e-14)


def test_discretize_small_rate_limit():
    # a -> 0: abar -> 1, bbar -> delta * b via the series branch
    delta, b = 0.7, 2.0
    abar, bbar = discretize(Tensor(np.array(delta)), Tensor(np.array(-1e-9)), Tensor(np.array(b)))
    np.testing.assert_allclose(abar.data, 1.0, rtol=1e-8)
    np.testing.assert_allclose(bbar.data, delta * b, rtol=1e-8)


def test_discretize_branch_continuity():
    # series and exact branch agree to 1e-10 relative at the |delta*a| = 1e-4 boundary
    for sign in (1.0, -1.0):
        for eps in (1 - 1e-9, 1 + 1e-9):
            u = sign * 1e-4 * eps
            delta = 0.5
            a = u / delta
            _, bbar = discretize(Tensor(np.array(delta)), Tensor(np.array(a)),
                                 Tensor(np.array(1.0)))
            exact = (np.exp(u) - 1.0) / a
            assert abs(bbar.data / exact - 1.0) < 1e-10


def test_discretize_matches_quadrature_oracle():
    # bbar must equal b * integral_0^delta exp(a*s) ds across |delta*a| in [1e-8, 10]
    rng = np.random.default_rng(0)
    for mag in np.logspace(-8, 1, 19):
        for sign in (1.0, -1.0):
            delta = float(rng.uniform(0.1, 2.0))
            a = sign * mag / delta
            b = float(rng.normal())
            _, bbar = discretize(Tensor(np.array(delta)), Tensor(np.array(a)),
                                 Tensor(np.array(b)))
            integral, err = quad(lambda s: np.exp(a * s), 0.0, delta,
                                 epsabs=1e-14, epsrel=1e-12)
            assert abs(bbar.data - integral * b) <= 1e-8 * max(abs(integral * b), 1e-300)


def test_discretize_rejects_nonpositive_step():
    with pytest.raises(DomainError, match="non-positive step"):
        discretize(Tensor(np.array(0.0)), Tensor(np.array(-1.0)), Tensor(np.array(1.0)))


# -- selective scan ----------------------------------------------------------


def test_scan_single_step_base_case():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 3))
    delta = np.array([0.8])
    a = -np.exp(rng.normal(size=(3, 2)))
    b = rng.normal(size=(1, 2))
    c = rng.normal(size=(1, 2))
    skip = rng.normal(size=3)
    y = selective_scan(Tensor(x), Tensor(delta), Tensor(a), Tensor(b), Tensor(c),
                       Tensor(skip)).data
    u = delta[0] * a
    bbar = delta[0] * (np.expm1(u) / u) * b[0][None, :]
    expect = (bbar * x[0][:, None]) @ c[0] + skip * x[0]
    np.testing.assert_allclose(y[0], expect, atol=1e-12)


def test_scan_matches_naive_loop():
    rng = np.random.default_rng(2)
    for L, D, N in [(6, 3, 2), (1, 2, 4), (25, 5, 3)]:
        x = rng.normal(size=(L, D))
        delta = rng.uniform(0.05, 2.0, size=L)
        delta[0] = 1e-6  # exercise the series branch
        a = -np.exp(rng.normal(size=(D, N)))
        b = rng.normal(size=(L, N))
        c = rng.normal(size=(L, N))
        skip = rng.normal(size=D)
        y = selective_scan(Tensor(x), Tensor(delta), Tensor(a), Tensor(b),
                           Tensor(c), Tensor(skip)).data
        np.testing.assert_allclose(y, naive_scan(x, delta, a, b, c, skip), atol=1e-12)


def test_scan_length_mismatch_error():
    with pytest.raises(ShapeError, match="length mismatch"):
        selective_scan(Tensor(np.ones((3, 2))), Tensor(np.ones(4)),
                       Tensor(-np.ones((2, 2))), Tensor(np.ones((3, 2))),
                       Tensor(np.ones((3, 2))))


def test_scan_rejects_nonpositive_delta():
    with pytest.raises(DomainError, match="non-positive"):
        selective_scan(Tensor(np.ones((2, 1))), Tensor(np.array([0.5, -0.1])),
                       Tensor(-np.ones((1, 1))), Tensor(np.ones((2, 1))),
                       Tensor(np.ones((2, 1))))


def test_scan_gradients_match_fd():
    rng = np.random.default_rng(3)
    L, D, N = 4, 2, 3
    x = Parameter(rng.normal(size=(L, D)), "x")
    delta = Parameter(rng.uniform(0.5, 1.5, size=L), "delta")
    a = Parameter(-np.exp(rng.normal(size=(D, N))), "a")
    b = Parameter(rng.normal(size=(L, N)), "b")
    c = Parameter(rng.normal(size=(L, N)), "c")
    skip = Parameter(rng.normal(size=D), "skip")
    w = rng.normal(size=(L, D))
    errs = check_param_grads(
        lambda: ag.reduce_sum(ag.mul(selective_scan(x, delta, a, b, c, skip), w)),
        [x, delta, a, b, c, skip])
    assert max(errs.values()) < 1e-4, errs


def test_stability_abar_in_unit_interval_and_contraction():
    rng = np.random.default_rng(4)
    a_log = rng.normal(size=(3, 4))
    a = -np.exp(a_log)
    for delta in (1e-8, 0.3, 5.0, 1e4):
        abar, _ = discretize(Tensor(np.array(delta)), Tensor(a), Tensor(np.ones(4)))
        assert np.all(abar.data < 1.0)
        if delta <= 5.0:
            assert np.all(abar.data > 0.0)
        else:
            assert np.all(abar.data >= 0.0)  # huge steps may underflow to exact 0
        z0 = rng.normal(size=(3, 4))
        z1 = abar.data * z0  # zero-input step
        assert np.linalg.norm(z1) < np.linalg.norm(z0)


# -- degenerate gated recurrence ---------------------------------------------


def test_gated_decay_reference_closed_form():
    z = gated_decay_reference([np.log(2.0), 2.0 * np.log(2.0)], [1.0, 1.0])
    np.testing.assert_allclose(z, [0.5, 0.75], rtol=1e-15)


def test_gated_decay_reference_large_gap_limit():
    c = 3.7
    z = gated_decay_reference([100.0, 300.0], [c, c])
    np.testing.assert_allclose(z, [c, c], rtol=1e-12)


def test_gated_decay_reference_rejects_nonincreasing():
    with pytest.raises(ValueError, match="strictly increasing"):
        gated_decay_reference([1.0, 1.0], [0.0, 0.0])


def test_scan_reproduces_gated_decay_reference():
    # pinning: N=1, a=-1, b=c=1, no feedthrough, raw gaps as steps
    rng = np.random.default_rng(5)
    for trial in range(20):
        L = int(rng.integers(2, 50))
        gaps = rng.uniform(0.01, 3.0, size=L)
        t = np.cumsum(gaps)
        x = rng.normal(size=L)
        y = selective_scan(Tensor(x.reshape(L, 1)), Tensor(gaps),
                           Tensor(np.array([[-1.0]])), Tensor(np.ones((L, 1))),
                           Tensor(np.ones((L, 1)))).data.reshape(-1)
        z = gated_decay_reference(t, x)
        assert np.max(np.abs(y - z)) < 1e-12


# -- full block ---------------------------------------------------------------


def test_block_zero_input_zero_output():
    rng = np.random.default_rng(6)
    blk = MambaBlock(d_model=8, d_state=4, d_conv=4, expand=2, rng=rng)
    u = Tensor(np.zeros((5, 8)))
    delta = Tensor(np.full(5, 0.7))
    out = blk(u, delta)
    np.testing.assert_array_equal(out.data, np.zeros((5, 8)))


@pytest.mark.parametrize("L", [1, 2, 7])
@pytest.mark.parametrize("d_model", [8, 64])
def test_block_shape_contract(L, d_model):
    rng = np.random.default_rng(7)
    blk = MambaBlock(d_model=d_model, d_state=4, d_conv=4, expand=2, rng=rng)
    out = blk(Tensor(rng.normal(size=(L, d_model))), Tensor(rng.uniform(0.1, 1.0, L)))
    assert out.shape == (L, d_model)


def test_block_causality_bit_identical():
    rng = np.random.default_rng(8)
    blk = MambaBlock(d_model=6, d_state=3, d_conv=4, expand=2, rng=rng)
    u = rng.normal(size=(9, 6))
    delta = Tensor(rng.uniform(0.1, 1.0, 9))
    base = blk(Tensor(u), delta).data
    for t in (0, 3, 8):
        bumped = u.copy()
        bumped[t] += 0.5
        out = blk(Tensor(bumped), delta).data
        assert np.array_equal(out[:t], base[:t])
        assert not np.array_equal(out[t:], base[t:])


def test_block_gradients_match_fd():
    rng = np.random.default_rng(9)
    blk = MambaBlock(d_model=4, d_state=2, d_conv=3, expand=2, rng=rng)
    u = rng.normal(size=(3, 4))
    delta = rng.uniform(0.5, 1.5, 3)
    w = rng.normal(size=(3, 4))
    params = [p for _, p in blk.named_parameters()]
    errs = check_param_grads(
        lambda: ag.reduce_sum(ag.mul(blk(Tensor(u), Tensor(delta)), w)), params)
    assert max(errs.values()) < 1e-4, errs


def test_ssm_core_parameter_stability_invariant():
    rng = np.random.default_rng(10)
    core = SsmCore(d_inner=6, d_state=16, rng=rng)
    a = -np.exp(core.A_log.data)
    assert np.all(a < 0.0)
    assert core.A_log.shape == (6, 16)
    # default rate ladder spans 1..N per channel
    np.testing.assert_allclose(np.exp(core.A_log.data[0]), np.arange(1, 17))
