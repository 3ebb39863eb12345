"""Acceptance results collected during the run and printed in the terminal summary."""

CRITERIA = []  # (number, passed, text)


def record(num, ok, text):
    CRITERIA.append((num, bool(ok), text))
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}")
    return ok
