import numpy as np
import pytest

from kmcl.encoder import EncoderConfig
from kmcl.grad import (
    ModelConfig,
    ParamStore,
    backward,
    central_differences,
    finite_diff_check,
    init_params,
    relative_error,
)
from kmcl.kmm import elu_grad
from kmcl.losses import LossConfig
from kmcl.similarity import SimilarityKind
from kmcl.verify import grad_problem, run_grad_check

KINDS = [k for k in SimilarityKind if k is not SimilarityKind.BHATTACHARYYA_FULL]


def test_param_store_layout_is_exact():
    layout = [("a", (2, 3)), ("b", (4,)), ("c", (2, 2, 2))]
    s = ParamStore(layout)
    assert s.size == 6 + 4 + 8
    s.view("b")[...] = 7.0
    np.testing.assert_array_equal(s.data[6:10], 7.0)
    assert s.coordinate_name(11) == "c[0,0,1]"
    with pytest.raises(ValueError):
        ParamStore([("a", (1,)), ("a", (2,))])
    with pytest.raises(ValueError):
        ParamStore(layout, np.zeros(3))


@pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.value)
def test_total_gradient_matches_central_differences(kind):
    problem = grad_problem(seed=1, loss=LossConfig(similarity=kind))
    res = run_grad_check(problem, seed=1)
    assert res.max_rel_err <= 1e-4, res.worst_name


@pytest.mark.parametrize("term", ["rec", "asl", "kmcl"])
def test_each_term_gradient(term):
    res = run_grad_check(grad_problem(seed=2), seed=2, h=1e-5, term=term)
    assert res.max_rel_err <= 1e-4, res.worst_name


def test_zero_gradient_at_flat_point():
    # every label on, only the reconstruction term: G_S == G_Y everywhere
    model = ModelConfig(2, EncoderConfig((3, 4, 4)))
    params = init_params(model, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3))
    y = np.ones((4, 2))
    _, g = backward(params, model, x, y, LossConfig(lambda_asl=0, lambda_kmcl=0))
    np.testing.assert_array_equal(g, 0.0)


def test_gradient_linear_in_loss_weights():
    problem = grad_problem(seed=3)
    params = init_params(problem.model, np.random.default_rng(3))
    params.data += np.random.default_rng(4).normal(0, 0.1, params.size)
    cfg = LossConfig(lambda_asl=0.37, lambda_kmcl=1.9)
    args = (params, problem.model, problem.x, problem.y, cfg)
    _, total = backward(*args, term="total")
    parts = {t: backward(*args, term=t)[1] for t in ("rec", "asl", "kmcl")}
    combined = parts["rec"] + 0.37 * parts["asl"] + 1.9 * parts["kmcl"]
    scale = np.maximum(np.abs(total), 1e-300)
    assert np.max(np.abs(total - combined) / np.maximum(scale, 1.0)) <= 1e-12


def test_backward_is_deterministic():
    problem = grad_problem(seed=5, batch=6, n_classes=4)
    params = init_params(problem.model, np.random.default_rng(5))
    a = backward(params, problem.model, problem.x, problem.y, problem.loss)[1]
    b = backward(params, problem.model, problem.x, problem.y, problem.loss)[1]
    assert a.tobytes() == b.tobytes()


def test_elu_gradient_continuous_at_zero():
    h = 1e-8
    left, right = elu_grad(np.array([-h]))[0], elu_grad(np.array([h]))[0]
    assert abs(left - right) <= 1e-6


def test_neg_log_derivative_spot_value():
    fn = lambda t: -np.log(t[0])  # noqa: E731
    assert central_differences(fn, np.array([0.5]), 1e-6)[0] == pytest.approx(-2.0, abs=1e-8)


def test_quadratic_toy_exact():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    fn = lambda t: 0.5 * t @ A @ t  # noqa: E731
    theta = np.array([0.7, -1.3])
    num = central_differences(fn, theta, 1e-4)
    assert np.max(relative_error(A @ theta, num)) <= 1e-10


def test_finite_difference_step_range():
    with pytest.raises(ValueError):
        central_differences(lambda t: 0.0, np.zeros(1), 1e-2)
    with pytest.raises(ValueError):
        central_differences(lambda t: 0.0, np.zeros(1), 1e-9)


def test_corrupted_gradient_is_flagged():
    res = run_grad_check(grad_problem(seed=6), seed=6, corrupt=True)
    assert res.max_rel_err > 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_gradient_named():
    problem = grad_problem(seed=7)
    params = init_params(problem.model, np.random.default_rng(7))
    params.view("encoder.W0")[0, 0] = np.inf
    with pytest.raises(FloatingPointError, match="encoder|kmm"):
        backward(params, problem.model, problem.x, problem.y, problem.loss)


def test_finite_diff_check_reports_worst_coordinate():
    problem = grad_problem(seed=8)
    params = init_params(problem.model, np.random.default_rng(8))
    res = finite_diff_check(params, problem.model, problem.x, problem.y, problem.loss)
    assert res.worst_name == params.coordinate_name(res.worst_index)
    assert len(res.names) == params.size
