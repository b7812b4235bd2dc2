import numpy as np


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def f32_unit_rows(rng, n, d):
    """Unit rows rounded to f32, the precision the tier manager stores."""
    return unit_rows(rng, n, d).astype(np.float32).astype(np.float64)


def random_rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Records one PASS/FAIL line per acceptance criterion.

    Use as a context manager; ``check`` asserts and remembers the detail.
    A criterion that raises anywhere inside the block is recorded as FAIL.
    """

    def __init__(self, number, title, limit_s=None):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.details = []

    def check(self, ok, detail):
        self.details.append(detail)
        assert ok, detail

    def __enter__(self):
        import time

        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time

        elapsed = time.perf_counter() - self._t0
        over = self.limit_s is not None and elapsed >= self.limit_s
        if over:
            self.details.append(f"runtime {elapsed:.1f}s over {self.limit_s}s")
        status = "FAIL" if exc_type is not None or over else "PASS"
        line = f"[{status}] criterion {self.number:>2} {self.title}: " + "; ".join(self.details)
        line += f" ({elapsed:.1f}s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if over and exc_type is None:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f}s, limit {self.limit_s}s")
        return False
