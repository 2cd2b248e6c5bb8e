"""Shared store for the one-line acceptance verdicts (printed again in the terminal summary)."""

import sys

LINES = []


def report(k, ok, detail):
    line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    return ok
