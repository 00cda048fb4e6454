"""Smoke test for the `corc` extension. Run after `maturin develop` in crates/python."""

import math

import corc


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    # Two indicator losses jumping at 0.3 and 0.7: h = (1 + #{q <= lambda}) / 3.
    losses = corc.parse_losses("step 0 0.3:1\nstep 0 0.7:1\n")
    assert len(losses) == 2 and losses[0](0.5) == 1.0 and losses[1](0.5) == 0.0
    r = corc.crc_bisect(losses, alpha=0.5, eps=1e-12)
    assert r.feasible and close(r.lambda_hat, 0.3), r
    r = corc.crc_bisect(losses, alpha=2.0 / 3.0, eps=1e-12)
    assert close(r.lambda_hat, 0.7), r

    # Identity disutility with t = 0 reproduces the mean calibration exactly.
    same = corc.corc_bisect(losses, alpha=0.5, t=0.0, disutility="identity", eps=1e-12)
    assert same.lambda_hat == corc.crc_bisect(losses, alpha=0.5, eps=1e-12).lambda_hat

    # Empirical cvar of 1..10 at delta 0.8 is the mean of the top two.
    assert close(corc.cvar_empirical([float(i) for i in range(1, 11)], 0.8), 9.5)

    # Mixed-sign linear losses under a linear bound.
    slopes = [0.4, -0.3, 0.9, 0.1, 0.6, -0.1]
    lin = [corc.Loss.linear(a) for a in slopes]
    fixed = corc.conformal_cvar_control(lin, alpha=0.8, delta=0.5, t=0.2, bound="linear 1")
    joint = corc.joint_lambda_t(slopes, bound_slope=1.0, alpha=0.8, delta=0.5)
    assert joint.lambda_hat >= fixed.lambda_hat - 1e-9
    h = corc.empirical_h_tilde(lin, fixed.lambda_hat, fixed.t_used, "cvar", 0.5, "linear 1")
    assert h <= 0.8 + 1e-9
    t = corc.tune_t(lin, alpha=0.8, delta=0.5, bound="linear 1")
    assert 0.0 <= t <= 0.8

    # Gradient through the joint solve against a central difference in one slope.
    grads = [[1.0 if j == i else 0.0 for j in range(len(slopes))] for i in range(len(slopes))]
    cal, (value, grad, kind) = corc.lambda_grad_joint_linear(slopes, grads, 1.0, 0.8, 0.5)
    assert close(value, cal.lambda_hat) and len(grad) == len(slopes)
    step = 1e-6
    up = corc.joint_lambda_t([a + step if i == 2 else a for i, a in enumerate(slopes)], 1.0, 0.8, 0.5, eps=1e-13)
    dn = corc.joint_lambda_t([a - step if i == 2 else a for i, a in enumerate(slopes)], 1.0, 0.8, 0.5, eps=1e-13)
    fd = (up.lambda_hat - dn.lambda_hat) / (2 * step)
    assert math.isclose(grad[2], fd, rel_tol=1e-3, abs_tol=1e-4), (grad[2], fd, kind)

    value, grad, kind = corc.lambda_grad_linear(slopes, grads, 1.0, 0.8, 0.5, t=0.2)
    assert kind in ("kkt", "interior_max", "fallback_zero")

    value, grad, kind = corc.conftr_grad([(0.9, [1.0]), (0.2, [2.0]), (0.5, [3.0])], alpha=0.5)
    assert kind == "active_jump" and len(grad) == 1

    try:
        corc.parse_losses("step zero\n")
    except corc.CorcError as e:
        assert "line 1" in str(e)
    else:
        raise AssertionError("bad input accepted")
    assert issubclass(corc.CorcError, ValueError)

    summary = corc.validate("synthetic", alpha=0.2, trials=1000, n_cal=30, seed=1)
    assert summary["passed"] and summary["n_trials"] == 1000
    print("smoke test passed:", summary["mean_risk"], "<=", summary["alpha"])


if __name__ == "__main__":
    main()
