"""Acceptance criteria 1-11 at their stated tolerances.

Each test records a one-line PASS/FAIL verdict; the lines are printed in
the terminal summary under "acceptance criteria".
"""

import subprocess
import sys

import numpy as np
import pytest

from tvbridge import acceptance as A
from tvbridge import autoencoder as ae
from tvbridge.convert import correlational_score
from tvbridge.training import forward_backward

from conftest import ACCEPTANCE_LINES


def _record(result: A.CheckResult):
    ACCEPTANCE_LINES[result.number] = result.line()
    print(result.line())
    assert result.passed, result.line()


def test_criterion_01_gradient_suite(ctx):
    _record(A.check_gradients(ctx))


def test_criterion_02_quantizer_oracle(ctx):
    _record(A.check_quantizer(ctx))


def test_criterion_03_straight_through(ctx):
    _record(A.check_straight_through(ctx))


def _torch_encoder_grads(torch, x, params, codes):
    """Autograd with detach() as the stop-gradient: a second, independent oracle."""
    t = {k: torch.tensor(v, requires_grad=True) for k, v in params.items()}
    xt = torch.tensor(x)
    depth = ae.depth_of(params)
    h = xt @ t["enc_in_w"] + t["enc_in_b"]
    for j in range(depth):
        h = h + t[f"enc{j}_mix"] @ torch.tanh(h @ t[f"enc{j}_w"] + t[f"enc{j}_b"])
    e = h
    heads, k, sub = codes.shape
    ct = torch.tensor(codes)
    es = e.reshape(*e.shape[:-1], heads, 1, sub)
    idx = ((es - ct) ** 2).sum(-1).argmin(-1)
    q = torch.stack([ct[m][idx[..., m]] for m in range(heads)], -2).reshape(e.shape)
    g = e + (q - e).detach()
    for j in range(depth):
        g = g + t[f"dec{j}_mix"] @ torch.tanh(g @ t[f"dec{j}_w"] + t[f"dec{j}_b"])
    xhat = g @ t["dec_out_w"] + t["dec_out_b"]
    b = x.shape[0] * x.shape[1]
    loss = (((xhat - xt) ** 2).sum() + ((e.detach() - q) ** 2).sum() + ((q.detach() - e) ** 2).sum()) / b
    loss.backward()
    return {k: v.grad.numpy() for k, v in t.items() if k.startswith("enc")}, idx.numpy()


def test_criterion_03_torch_autograd_agrees():
    torch = pytest.importorskip("torch")
    torch.set_default_dtype(torch.float64)
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(10):
        x, params, codes = A._random_instance(rng)
        _, _, _, grads, _, idx = forward_backward(x, params, codes)
        want, tidx = _torch_encoder_grads(torch, x, params, codes)
        assert np.array_equal(idx, tidx)
        for key, g in want.items():
            worst = max(worst, float(np.max(np.abs(grads[key] - g) / np.maximum(1.0, np.abs(g)))))
    assert worst <= 1e-10


def test_criterion_04_hungarian_oracle(ctx):
    _record(A.check_hungarian(ctx))


def test_criterion_05_jsd_properties(ctx):
    _record(A.check_jsd(ctx))


def test_criterion_06_warmup_convergence(ctx):
    _record(A.check_warmup(ctx))


def test_criterion_07_round_trip(ctx):
    _record(A.check_round_trip(ctx))


def test_criterion_08_forecast_pipeline(ctx):
    _record(A.check_forecast(ctx))


def test_criterion_09_classification(ctx):
    _record(A.check_classification(ctx))


def test_criterion_10_determinism_and_persistence(ctx):
    _record(A.check_persistence(ctx))


def test_criterion_10_selftest_subcommand(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tvbridge", "selftest", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    lines = res.stdout.strip().splitlines()
    assert res.returncode == 0, res.stdout + res.stderr
    assert sum(line.startswith("[PASS]") for line in lines) == 11
    assert lines[-1] == "selftest: all 11 criteria passed"
    assert len((tmp_path / "selftest.csv").read_text().splitlines()) == 12


def test_criterion_11_correlational_score(ctx):
    _record(A.check_correlational(ctx))


@pytest.mark.xfail(strict=True, reason="the stated example value 0.8 does not follow from the formula; "
                                        "the formula gives 0.4")
def test_criterion_11_stated_example_value():
    base = np.random.default_rng(0).normal(size=200)
    got = correlational_score(np.stack([base, base], 1), np.stack([base, -base], 1))
    assert got == pytest.approx(A.STATED_CORRELATION_EXAMPLE)
