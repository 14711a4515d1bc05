import numpy as np
import pytest

from src.errors import ShapeError
from src.optim import SGD, OptimizerState, RAdam, make_optimizer, radam_step, sgd_step
from src.tensor import Tensor


def _quadratic_descent(lr, steps, x0=(3.0, 4.0)):
    x = np.array(x0)
    state = OptimizerState.for_params([x], lr=lr)
    for _ in range(steps):
        (x,), state = radam_step([x], [2.0 * x], state)
    return x, state


def test_zero_gradient_leaves_parameters_unchanged(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    state = OptimizerState.for_params(params, lr=0.1)
    current = params
    for _ in range(20):
        current, state = radam_step(current, [np.zeros_like(p) for p in current], state)
    for before, after in zip(params, current):
        assert np.array_equal(before, after)
    assert state.t == 20


def test_rectification_starts_after_step_four():
    state = OptimizerState()
    assert state.rho_inf == pytest.approx(1999.0)
    assert state.rho(1) == pytest.approx(1.0, abs=1e-6)
    for t in range(1, 5):
        assert state.rho(t) <= 4.0
        assert state.rectification(t) is None
    assert state.rho(5) > 4.0
    assert 0.0 < state.rectification(5) < 0.05
    factors = [state.rectification(t) for t in range(5, 2000, 50)]
    assert all(a < b for a, b in zip(factors, factors[1:]))
    assert factors[-1] < 1.0


def test_first_step_is_plain_momentum_step(rng):
    p, g = rng.normal(size=5), rng.normal(size=5)
    state = OptimizerState.for_params([p], lr=0.05)
    (updated,), new_state = radam_step([p], [g], state)
    assert np.allclose(updated, p - 0.05 * g, rtol=0, atol=1e-15)
    assert new_state.t == 1
    assert state.t == 0
    assert not state.m[0].any()


def test_rectified_step_matches_hand_computation(rng):
    p, g = rng.normal(size=3), rng.normal(size=3)
    state = OptimizerState.for_params([p], lr=0.01)
    params = [p]
    for _ in range(5):
        params, state = radam_step(params, [g], state)
    # constant gradient: m_hat = g and v_hat = g^2 at every step
    expected = p - 4 * 0.01 * g - 0.01 * state.rectification(5) * g / (np.abs(g) + 1e-8)
    assert np.allclose(params[0], expected, atol=1e-12)


def test_radam_descends_a_quadratic_bowl():
    x, _ = _quadratic_descent(lr=0.1, steps=1000)
    assert np.linalg.norm(x) < 1e-2


@pytest.mark.parametrize("steps", [100, 500])
def test_radam_small_learning_rate_still_decreases_loss(steps):
    x, _ = _quadratic_descent(lr=1e-2, steps=steps)
    assert float(x @ x) < 25.0


def test_radam_step_is_deterministic(rng):
    params = [rng.normal(size=(2, 2))]
    grads = [rng.normal(size=(2, 2))]
    state = OptimizerState.for_params(params, lr=1e-3)
    a, sa = radam_step(params, grads, state)
    b, sb = radam_step(params, grads, state)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(sa.m[0], sb.m[0]) and np.array_equal(sa.v[0], sb.v[0])


def test_step_shape_errors(rng):
    params = [rng.normal(size=3)]
    state = OptimizerState.for_params(params)
    with pytest.raises(ShapeError):
        radam_step(params, [np.zeros(4)], state)
    with pytest.raises(ShapeError):
        radam_step(params + [np.zeros(2)], [np.zeros(3), np.zeros(2)], state)
    with pytest.raises(ShapeError):
        sgd_step(params, [np.zeros((3, 1))], 0.1)
    with pytest.raises(ShapeError):
        sgd_step(params, [], 0.1)


def test_sgd_step_arithmetic():
    (p,) = sgd_step([np.array(1.0)], [np.array(2.0)], 0.1)
    assert float(p) == pytest.approx(0.8, abs=1e-15)
    params = [np.array([1.0, -2.0])]
    assert np.array_equal(sgd_step(params, [np.array([5.0, 7.0])], 0.0)[0], params[0])


def test_sgd_matches_hand_rolled_loop():
    # y = a * x^2 + b * x + c fitted to one point by squared error
    x, target, lr = 1.5, 2.0, 0.01
    tensors = [Tensor(np.array(v), requires_grad=True) for v in (0.3, -0.2, 0.1)]
    optimizer = SGD(tensors, lr=lr)
    a, b, c = 0.3, -0.2, 0.1
    for _ in range(25):
        optimizer.zero_grad()
        ta, tb, tc = tensors
        pred = ta * (x * x) + tb * x + tc
        ((pred - target) * (pred - target)).sum().backward()
        optimizer.step()

        twice_residual = 2 * (a * (x * x) + b * x + c - target)
        a, b, c = a - lr * (twice_residual * (x * x)), b - lr * (twice_residual * x), c - lr * twice_residual
    for tensor, expected in zip(tensors, (a, b, c)):
        assert abs(float(tensor.data) - expected) <= 1e-15
    assert optimizer.t == 25


def test_radam_state_dict_round_trip(rng):
    def fresh():
        return [Tensor(rng_params.copy(), requires_grad=True), Tensor(rng_bias.copy(), requires_grad=True)]

    rng_params, rng_bias = rng.normal(size=(3, 2)), rng.normal(size=2)
    grads = [[rng.normal(size=(3, 2)), rng.normal(size=2)] for _ in range(8)]

    reference = RAdam(fresh(), lr=1e-2)
    for step_grads in grads:
        for p, g in zip(reference.params, step_grads):
            p.grad = g
        reference.step()

    first = RAdam(fresh(), lr=1e-2)
    for step_grads in grads[:5]:
        for p, g in zip(first.params, step_grads):
            p.grad = g
        first.step()

    resumed = RAdam([Tensor(p.data.copy(), requires_grad=True) for p in first.params], lr=1e-2)
    resumed.load_state_dict(first.state_dict())
    assert resumed.state.t == 5
    for step_grads in grads[5:]:
        for p, g in zip(resumed.params, step_grads):
            p.grad = g
        resumed.step()

    for a, b in zip(reference.params, resumed.params):
        assert np.array_equal(a.data, b.data)


def test_radam_load_state_dict_checks_shapes(rng):
    optimizer = RAdam([Tensor(rng.normal(size=3), requires_grad=True)])
    state = optimizer.state_dict()
    state["m"] = [np.zeros(4)]
    state["v"] = [np.zeros(4)]
    with pytest.raises(ShapeError):
        optimizer.load_state_dict(state)
    state["m"] = []
    with pytest.raises(ShapeError):
        optimizer.load_state_dict(state)


def test_make_optimizer():
    params = [Tensor(np.zeros(2), requires_grad=True)]
    assert isinstance(make_optimizer("radam", params, 1e-5), RAdam)
    assert isinstance(make_optimizer("sgd", params, 1e-5), SGD)
    with pytest.raises(ValueError):
        make_optimizer("adamw", params, 1e-5)
    with pytest.raises(ValueError):
        RAdam(params, lr=-1.0)
