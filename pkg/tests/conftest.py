import numpy as np
import pytest

from attn_inpaint import tensor as T


@pytest.fixture(autouse=True)
def _finite_checks():
    T.set_check_finite(True)
    yield
    T.set_check_finite(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_check(fn, x, step=1e-6):
    """Tape gradient of scalar fn at float64 x vs central differences."""
    from attn_inpaint.oracle import finite_diff_grad, grad_rel_error

    with T.precision("float64"):
        xt = T.Tensor(np.array(x, dtype=np.float64), requires_grad=True)
        g = T.grad(fn(xt), xt).data
        ref = finite_diff_grad(lambda a: fn(T.Tensor(a)).data, x, step)
    return grad_rel_error(g, ref)


@pytest.fixture(scope="session")
def desk_runs():
    """200-step desk-scale runs of the full model and its attention-ablated twin."""
    import time

    from attn_inpaint import trainer as TR
    from attn_inpaint.imageio import image_to_tensor, synth_textures
    from attn_inpaint.model import ArchSpec

    train_set = np.concatenate([image_to_tensor(t) for t in synth_textures(16, 64, seed=1)])
    held_out = np.concatenate([image_to_tensor(t) for t in synth_textures(8, 64, seed=2)])
    out = {}
    for name, use_attention in (("full", True), ("ablated", False)):
        cfg = TR.TrainConfig(image_size=64, hole_h=32, hole_w=32, steps=200, seed=0)
        models = TR.build_models(ArchSpec(use_attention=use_attention), cfg)
        before = TR.heldout_discounted_l1(models.gen, held_out, 32, 32, seed=99)
        metrics_before = TR.evaluate(models.gen, held_out, 32, 32, seed=99)
        t0 = time.perf_counter()
        TR.train(models, train_set)
        out[name] = {
            "seconds": time.perf_counter() - t0,
            "history": models.history,
            "steps": models.step,
            "critic_updates": models.critic_updates,
            "dl1_before": before,
            "dl1_after": TR.heldout_discounted_l1(models.gen, held_out, 32, 32, seed=99),
            "metrics_before": metrics_before,
            "metrics_after": TR.evaluate(models.gen, held_out, 32, 32, seed=99),
        }
    return out


_CRITERIA = {}


def record_criterion(n, passed, detail):
    _CRITERIA[n] = (passed, detail)
    print(f"CRITERION {n:2d} {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"CRITERION {n:2d} {'PASS' if passed else 'FAIL'}  {detail}")
