from gsdnet.gradcheck import TERMS, run_grad_check


def test_gradients_match_finite_differences():
    """Median relative error sharply below 1e-4, worst below 1e-3, for
    every loss term and for the full composite objective."""
    results = run_grad_check(seed=0, step=1e-3)
    assert set(results) == set(TERMS)
    for term, (median, worst) in results.items():
        assert median < 1e-4, (term, median)
        assert worst < 1e-3, (term, worst)
