#!/usr/bin/env python3
"""Least-squares polynomial fits of ReLU on [-8, 8].

Writes crates/core/data/relu_poly.txt: one line per degree,
`<degree>: c0 c1 ... cd` (ascending powers).
"""
import pathlib

import numpy as np

LO, HI = -8.0, 8.0
SAMPLES = 4001
DEGREES = (1, 2, 3, 4, 5, 6, 7, 8)


def fit(degree):
    # relu(x) = x/2 + |x|/2: the odd part is exact, only |x|/2 is fitted,
    # over even powers, in the scaled variable t = x / 8.
    x = np.linspace(LO, HI, SAMPLES)
    t = x / HI
    even = list(range(0, degree + 1, 2))
    basis = np.stack([t**k for k in even], axis=1)
    fitted, *_ = np.linalg.lstsq(basis, np.abs(x) / 2.0, rcond=None)
    coeffs = [0.0] * (degree + 1)
    for k, c in zip(even, fitted):
        coeffs[k] = c / HI**k
    if degree >= 1:
        coeffs[1] = 0.5
    return coeffs


def main():
    out = pathlib.Path(__file__).resolve().parent.parent / "crates/core/data/relu_poly.txt"
    lines = ["# ReLU least-squares fits on [-8, 8], ascending powers. Generated by scripts/fit_relu_poly.py."]
    for d in DEGREES:
        lines.append(f"{d}: " + " ".join(f"{c:.17e}" for c in fit(d)))
    out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
