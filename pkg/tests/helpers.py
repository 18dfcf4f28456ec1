import numpy as np

TWO_STATE = np.array([[0.9, 0.1], [0.2, 0.8]])


def within_se(estimate, target, samples, k=3.0):
    """True where |estimate - target| <= k standard errors of the mean of ``samples``."""
    samples = np.asarray(samples, dtype=float)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    return np.abs(np.asarray(estimate) - np.asarray(target)) <= k * se + 1e-12


ACCEPTANCE_LINES: list[str] = []


def report(tag, name, ok, detail):
    """Record one acceptance verdict line and return ``ok``."""
    line = f"[{tag}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
