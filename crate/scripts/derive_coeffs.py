#!/usr/bin/env python3
"""Derive the frozen polynomial coefficients shipped in data/poly_coeffs.txt.

Runs offline with arbitrary-precision arithmetic (mpmath). The simulator never
executes this; it consumes the frozen hex patterns. Re-running must reproduce
the shipped file byte-for-byte (the table's checksum is asserted in tests).

Method: least-squares fit with relative weighting on a dense Chebyshev grid,
followed by greedy rounding to FP32 (round the highest-degree coefficient,
refit the remainder, repeat). This lands within a few percent of true minimax,
far below the rounding noise of the FP32 evaluation pipeline.
"""

import struct
import sys

import mpmath as mp

mp.mp.prec = 200


def f32(x):
    """Round an mpf to the nearest FP32 value, returned as mpf."""
    return mp.mpf(struct.unpack(">f", struct.pack(">f", float(x)))[0])


def f32_bits(x):
    return struct.unpack(">I", struct.pack(">f", float(x)))[0]


def cheb_nodes(a, b, n):
    return [
        (mp.mpf(a) + mp.mpf(b)) / 2
        + (mp.mpf(b) - mp.mpf(a)) / 2 * mp.cos(mp.pi * (2 * k + 1) / (2 * n))
        for k in range(n)
    ]


def lstsq_fit(xs, ys, ws, degree):
    """Weighted least squares for coefficients c_0..c_degree."""
    n = degree + 1
    ata = mp.zeros(n, n)
    atb = mp.zeros(n, 1)
    for x, y, w in zip(xs, ys, ws):
        powers = [mp.mpf(1)]
        for _ in range(degree):
            powers.append(powers[-1] * x)
        for i in range(n):
            atb[i, 0] += w * powers[i] * y
            for j in range(n):
                ata[i, j] += w * powers[i] * powers[j]
    sol = mp.lu_solve(ata, atb)
    return [sol[i, 0] for i in range(n)]


def greedy_round(xs, ys, ws, coeffs):
    """Round coefficients to FP32 from the top degree down, refitting the rest."""
    degree = len(coeffs) - 1
    fixed = {}
    for d in range(degree, -1, -1):
        fixed[d] = f32(coeffs[d])
        if d == 0:
            break
        resid = []
        for x, y in zip(xs, ys):
            r = y
            for k, c in fixed.items():
                r -= c * x**k
            resid.append(r)
        coeffs = lstsq_fit(xs, resid, ws, d - 1)
    return [fixed[d] for d in range(degree + 1)]


def max_rel_err(f, poly_val, a, b, samples=4001):
    worst = mp.mpf(0)
    for k in range(samples):
        x = mp.mpf(a) + (mp.mpf(b) - mp.mpf(a)) * k / (samples - 1)
        fx = f(x)
        if fx == 0:
            continue
        worst = max(worst, abs((poly_val(x) - fx) / fx))
    return worst


def emit(name, coeffs):
    lines = []
    for i, c in enumerate(coeffs):
        lines.append(f"{name}{i} 0x{f32_bits(c):08X}")
    return lines


def split_const(value, chunks, chunk_bits):
    """Split a constant into FP32 parts whose leading parts carry only
    `chunk_bits` significant bits each (so small-integer multiples stay exact).
    The final part absorbs the full remaining FP32-rounded residue."""
    parts = []
    rest = mp.mpf(value)
    for i in range(chunks - 1):
        # Truncate to chunk_bits significant bits.
        e = mp.floor(mp.log(abs(rest), 2))
        scale = mp.power(2, e - chunk_bits + 1)
        part = mp.floor(rest / scale) * scale
        part = f32(part)
        parts.append(part)
        rest = mp.mpf(value) - sum(parts)
    parts.append(f32(rest))
    return parts


def main():
    out = []

    # --- exp: e^r = 1 + r*(q0 + q1 r + ... + q5 r^5) on |r| <= ln2/2 ---
    half_ln2 = mp.ln(2) / 2
    xs = cheb_nodes(-half_ln2, half_ln2, 600)
    ys = [(mp.exp(x) - 1) / x for x in xs]
    ws = [mp.mpf(1) for _ in xs]  # (e^r-1)/r is ~1; absolute ~ relative here
    q = lstsq_fit(xs, ys, ws, 5)
    q = greedy_round(xs, ys, ws, q)
    err = max_rel_err(
        mp.exp,
        lambda x: 1 + x * mp.polyval(list(reversed(q)), x),
        -half_ln2,
        half_ln2,
    )
    print(f"exp  poly max rel err = {mp.nstr(err, 4)} (2^{mp.nstr(mp.log(err, 2), 4)})",
          file=sys.stderr)
    assert err < mp.mpf(2) ** -26
    out += emit("EXP_Q", q)

    # --- sin: sin r = r*(1 + u*(s0 + s1 u + s2 u^2 + s3 u^3)), u = r^2 ---
    quarter_pi = mp.pi / 4
    us = cheb_nodes(mp.mpf(0), quarter_pi**2, 600)
    ys = [(mp.sin(mp.sqrt(u)) / mp.sqrt(u) - 1) / u for u in us]
    ws = [mp.mpf(1) for _ in us]
    s = lstsq_fit(us, ys, ws, 3)
    s = greedy_round(us, ys, ws, s)
    err = max_rel_err(
        mp.sin,
        lambda x: x * (1 + x**2 * mp.polyval(list(reversed(s)), x**2)),
        mp.mpf("1e-6"),
        quarter_pi,
    )
    print(f"sin  poly max rel err = {mp.nstr(err, 4)} (2^{mp.nstr(mp.log(err, 2), 4)})",
          file=sys.stderr)
    assert err < mp.mpf(2) ** -26
    out += emit("SIN_S", s)

    # --- cos: cos r = 1 + u*(c0 + c1 u + c2 u^2 + c3 u^3), u = r^2 ---
    ys = [(mp.cos(mp.sqrt(u)) - 1) / u for u in us]
    c = lstsq_fit(us, ys, ws, 3)
    c = greedy_round(us, ys, ws, c)
    err = max_rel_err(
        mp.cos,
        lambda x: 1 + x**2 * mp.polyval(list(reversed(c)), x**2),
        mp.mpf(0),
        quarter_pi,
    )
    print(f"cos  poly max rel err = {mp.nstr(err, 4)} (2^{mp.nstr(mp.log(err, 2), 4)})",
          file=sys.stderr)
    assert err < mp.mpf(2) ** -26
    out += emit("COS_C", c)

    # --- range-reduction constants ---
    # ln2 split: hi carries 16 significant bits so k*hi (|k| <= 2^8 after the
    # two-part k split... here k itself stays below 2^8 only for small x; the
    # exp path multiplies k (<= 2^8 magnitude ~ 159) directly, 16+8 = 24 bits:
    # exact in FP32.
    ln2_parts = split_const(mp.ln(2), 2, 16)
    out.append(f"EXP_LN2_HI 0x{f32_bits(ln2_parts[0]):08X}")
    out.append(f"EXP_LN2_LO 0x{f32_bits(ln2_parts[1]):08X}")
    out.append(f"EXP_INV_LN2 0x{f32_bits(f32(1 / mp.ln(2))):08X}")
    # Round-to-int magic: 1.5 * 2^23.
    out.append(f"ROUND_MAGIC 0x{f32_bits(mp.mpf(3 * 2**22)):08X}")

    # pi/2 split into 12-bit chunks: the sin/cos reduction splits k into 8-bit
    # halves, so 12+8 = 20-bit products stay exact in FP32.
    pio2_parts = split_const(mp.pi / 2, 4, 12)
    for i, p in enumerate(pio2_parts, 1):
        out.append(f"PIO2_{i} 0x{f32_bits(p):08X}")
    out.append(f"TWO_OVER_PI 0x{f32_bits(f32(2 / mp.pi)):08X}")

    for line in out:
        print(line)


if __name__ == "__main__":
    main()
