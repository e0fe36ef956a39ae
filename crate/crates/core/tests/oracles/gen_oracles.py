"""Frozen reference values for the geodesy and transform tests.

Run from this directory: python3 gen_oracles.py
Inputs are float64 values printed with repr so the Rust side reads the
same binary numbers; outputs are evaluated at 50 significant digits.
"""

import mpmath as mp
import numpy as np
import sympy as sp

mp.mp.dps = 50

A = mp.mpf("6378137.0")
E2 = mp.mpf("6.69437999e-3")


def ecef(lat, lon, h):
    lat, lon, h = mp.mpf(lat), mp.mpf(lon), mp.mpf(h)
    n = A / mp.sqrt(1 - E2 * mp.sin(lat) ** 2)
    return (
        (n + h) * mp.cos(lat) * mp.cos(lon),
        (n + h) * mp.cos(lat) * mp.sin(lon),
        ((1 - E2) * n + h) * mp.sin(lat),
    )


def fmt(x):
    return mp.nstr(x, 20, strip_zeros=False, min_fixed=-30, max_fixed=30)


def write_ecef(rng):
    with open("ecef.csv", "w") as f:
        f.write("lat,lon,alt,x,y,z\n")
        for _ in range(1000):
            lat = float(rng.uniform(-np.pi / 2, np.pi / 2))
            lon = float(rng.uniform(-np.pi, np.pi))
            alt = float(rng.uniform(-500.0, 10000.0))
            x, y, z = ecef(lat, lon, alt)
            f.write(f"{lat!r},{lon!r},{alt!r},{fmt(x)},{fmt(y)},{fmt(z)}\n")


def write_points():
    # N at 45 degrees, N and z at the pole.
    n45 = A / mp.sqrt(1 - E2 * mp.sin(mp.pi / 4) ** 2)
    n90 = A / mp.sqrt(1 - E2)
    with open("ecef_points.csv", "w") as f:
        f.write("name,value\n")
        f.write(f"n_45,{fmt(n45)}\n")
        f.write(f"n_90,{fmt(n90)}\n")
        f.write(f"z_pole,{fmt((1 - E2) * n90)}\n")


def symbolic_transform():
    rx, ry, rz, tx, ty, tz = sp.symbols("R_x R_y R_z t_x t_y t_z", real=True)
    c, s = sp.cos, sp.sin
    m = sp.Matrix(
        [
            [c(ry) * c(rz), -c(ry) * s(rz), s(ry), tx],
            [s(rx) * s(ry) * c(rz) + c(rx) * s(rz), -s(rx) * s(ry) * s(rz) + c(rx) * c(rz), -s(rx) * c(ry), ty],
            [-c(rx) * s(ry) * c(rz) + s(rx) * s(rz), c(rx) * s(ry) * s(rz) + s(rx) * c(rz), c(rx) * c(ry), tz],
            [0, 0, 0, 1],
        ]
    )
    return (rx, ry, rz, tx, ty, tz), m


def write_transform(rng):
    syms, m = symbolic_transform()
    cols = ",".join(f"m{i}{j}" for i in range(3) for j in range(4))
    with open("transform.csv", "w") as f:
        f.write(f"rx,ry,rz,tx,ty,tz,{cols}\n")
        for _ in range(1000):
            ang = [float(v) for v in rng.uniform(-np.pi, np.pi, 3)]
            tr = [float(v) for v in rng.uniform(-10.0, 10.0, 3)]
            subs = {k: sp.Float(repr(v), 50) for k, v in zip(syms, ang + tr)}
            vals = [m[i, j].evalf(40, subs=subs) for i in range(3) for j in range(4)]
            ins = ",".join(repr(v) for v in ang + tr)
            outs = ",".join(fmt(mp.mpf(str(v))) for v in vals)
            f.write(f"{ins},{outs}\n")


if __name__ == "__main__":
    rng = np.random.default_rng(20240601)
    write_ecef(rng)
    write_points()
    write_transform(rng)
