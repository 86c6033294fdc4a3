import numpy as np
import pytest

from boltzmann_nsf.time_schemes import BaseTimeScheme, ExponentialEuler, StrangSplit, get_time_scheme


class ScalarPropagators:
    """Diagonal propagators of d/dt f = a f on every mode."""

    def __init__(self, a: float, modes: int = 2, nodes: int = 3):
        self.a = a
        self.shape = (modes, nodes, nodes)

    def exponentials(self, t):
        return np.broadcast_to(np.exp(self.a * t) * np.eye(self.shape[1]), self.shape)

    def phi_functions(self, dt):
        z = self.a * dt
        identity = np.eye(self.shape[1])
        return (
            np.broadcast_to(np.exp(z) * identity, self.shape),
            np.broadcast_to(np.expm1(z) / z * identity, self.shape),
            np.broadcast_to((np.expm1(z) - z) / z ** 2 * identity, self.shape),
        )


@pytest.mark.parametrize(
    "name, cls",
    [("exponential-euler", ExponentialEuler), ("etd1", ExponentialEuler), ("strang-split", StrangSplit), ("strang", StrangSplit)],
)
def test_factory_names(name, cls):
    scheme = get_time_scheme(name)
    assert isinstance(scheme, cls)
    assert get_time_scheme(scheme) is scheme


def test_factory_rejects_unknown_names():
    with pytest.raises(ValueError):
        get_time_scheme("runge-kutta-4")


def test_base_scheme_is_abstract():
    with pytest.raises(TypeError):
        BaseTimeScheme()


@pytest.mark.parametrize("scheme", [ExponentialEuler(), StrangSplit()])
def test_linear_step_is_the_exponential(scheme):
    fields = np.arange(6.0).reshape(2, 3)
    out = scheme.step(fields, 0.5, 0.1, ScalarPropagators(-2.0), lambda f: np.zeros_like(f))
    assert np.allclose(out, np.exp(-0.2) * fields)


def test_exponential_euler_constant_forcing_is_exact():
    a, dt, eps = -1.5, 0.2, 0.5
    fields = np.ones((2, 3))
    forcing = np.full((2, 3), 0.3)
    out = ExponentialEuler().step(fields, eps, dt, ScalarPropagators(a), lambda f: forcing)
    exact = np.exp(a * dt) * fields + (np.expm1(a * dt) / a) * forcing / eps
    assert np.allclose(out, exact)


def test_strang_split_is_second_order_on_a_linear_forcing():
    a, eps, T = -1.0, 1.0, 1.0
    b = -0.5
    exact = np.exp((a + b) * T)

    def error(steps):
        dt = T / steps
        fields = np.ones((2, 3))
        scheme = StrangSplit()
        for _ in range(steps):
            fields = scheme.step(fields, eps, dt, ScalarPropagators(a), lambda f: b * f)
        return abs(fields[0, 0] - exact)

    assert error(10) / error(20) == pytest.approx(4.0, rel=0.1)


def test_apply_modewise():
    matrices = np.stack([np.eye(2), 2 * np.eye(2)])
    fields = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(BaseTimeScheme.apply_modewise(matrices, fields), [[1.0, 2.0], [6.0, 8.0]])
