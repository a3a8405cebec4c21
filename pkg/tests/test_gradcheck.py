"""Registered-op finite-difference suite at reduced trial counts (fast path).

The acceptance module reruns this at the full 20 trials with the stated
tolerances; here we keep the suite wired into every pytest run.
"""

from alda import gradcheck


def test_every_registered_op_has_coverage_and_passes():
    errs = gradcheck.check_ops(trials=5)
    from alda.tensor import OPS

    assert set(errs) == set(OPS)
    bad = {k: v for k, v in errs.items() if v >= gradcheck.OP_TOLERANCE}
    assert not bad, f"ops over tolerance: {bad}"


def test_deep_composition_within_tolerance():
    assert gradcheck.check_compositions(trials=5) < gradcheck.COMPOSITE_TOLERANCE


def test_three_objectives_match_explicit_expressions():
    checks = gradcheck.check_objectives()
    assert [c.name for c in checks] == [
        "discriminator_objective",
        "classifier_objective",
        "generator_objective",
    ]
    for c in checks:
        assert c.passed, f"{c.name}: {c.max_err:.3e} >= {c.tolerance}"


def test_report_shape():
    report = gradcheck.run_suite(trials=2)
    names = [name for name, _, _ in report]
    assert "op:grl" in names and "objective:generator_objective" in names
    assert gradcheck.suite_passed(report)
