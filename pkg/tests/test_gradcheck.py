import numpy as np
import pytest

from ocdepth.gradcheck import SUITES, compare, numeric_gradient, run_all
from ocdepth.synth import ToyModel, model_backward, model_forward


def test_numeric_gradient_quadratic():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -1.2])
    g = numeric_gradient(lambda v: 0.5 * v @ a @ v, x.copy())
    np.testing.assert_allclose(g, a @ x, rtol=1e-9)


def test_numeric_gradient_restores_input():
    x = np.array([1.0, 2.0, 3.0])
    numeric_gradient(lambda v: float(np.sum(v**3)), x)
    np.testing.assert_array_equal(x, [1.0, 2.0, 3.0])


def test_compare_catches_wrong_gradient():
    assert compare([1.0, 2.0], [1.0, 2.0])[0] == 0
    assert compare([1.0, 2.0], [1.0, 2.001])[0] == 1
    # tiny entries pass on the absolute floor
    assert compare([1e-8], [3e-8])[0] == 0


@pytest.mark.parametrize("name", list(SUITES))
def test_suite_passes(name):
    (res,) = run_all(n=20, seed=3, suites=[name])
    assert res.passed, res.line()
    assert res.instances == 20 and res.checked > 0
    assert res.line().startswith("PASS")


def test_forward_jacobian_on_small_grid():
    """Each output channel of the model on a 4x4 grid against central differences."""
    rng = np.random.default_rng(0)
    model = ToyModel.init(seed=5, depth_init=12.0)
    feats = rng.normal(size=(4, 4, model.n_features))
    for channel in range(2):
        for r, c in [(0, 0), (1, 3), (3, 2)]:
            pred, cache = model_forward(model, feats)
            g_raw = np.zeros((4, 4))
            g_s = np.zeros((4, 4))
            (g_raw if channel == 0 else g_s)[r, c] = 1.0
            analytic = model_backward(model, cache, g_raw, g_s).flat()

            def output(theta):
                m = model.copy()
                m.set_flat(theta)
                p, _ = model_forward(m, feats)
                return float((p.depth_raw if channel == 0 else p.log_var)[r, c])

            numeric = numeric_gradient(output, model.flat())
            assert compare(analytic, numeric)[0] == 0
