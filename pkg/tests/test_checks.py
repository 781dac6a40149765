from ksme import checks


def test_small_suite_passes_and_is_deterministic():
    a = checks.run_checks(0, "small")
    b = checks.run_checks(0, "small")
    assert all(r.passed for r in a), checks.format_table(a)
    assert checks.format_table(a) == checks.format_table(b)


def test_injected_fault_is_caught():
    results = checks.run_checks(0, "small", fault="kernel")
    failed = {r.name for r in results if not r.passed}
    assert "ksme equals reduced MICo" in failed
