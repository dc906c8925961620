"""Generate the packaged member profile CSVs.

The shipped communities need deterministic base consumption/production
time series.  This script writes them from closed-form diurnal shapes:
consumers follow a smooth daily load curve, producers a solar bell that
is zero at night.  Values are netted per member and step (at most one of
consumption/production is nonzero) and rounded, so regenerating the
files is reproducible byte for byte.

Run from the repository root:

    python3 tools/make_profiles.py
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

CONFIG_DIR = Path(__file__).resolve().parent.parent / "src" / "recopt" / "configs"


def daily_load(hours: np.ndarray, base: float, swing: float, peak_hour: float) -> np.ndarray:
    """Smooth consumption curve peaking at peak_hour, kW."""
    return base + swing * np.sin(2.0 * np.pi * (hours - peak_hour + 6.0) / 24.0)


def solar(hours: np.ndarray, peak_kw: float, sunrise: float, sunset: float,
          sharpness: float) -> np.ndarray:
    """Solar bell between sunrise and sunset, zero at night, kW."""
    day = hours % 24.0
    phase = (day - sunrise) / (sunset - sunrise)
    bell = np.where((phase > 0.0) & (phase < 1.0), np.sin(np.pi * np.clip(phase, 0.0, 1.0)), 0.0)
    return peak_kw * bell ** sharpness


def write_csv(path: Path, header: list[str], columns: list[np.ndarray], decimals: int):
    rows = np.column_stack(columns).round(decimals)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{value:.{decimals}f}" for value in row])
    print(f"wrote {path} ({rows.shape[0]} steps, {rows.shape[1]} columns)")


def make_rec2():
    # 128 hourly steps; member 1 consumes, member 2 produces (solar).
    steps = 128
    hours = np.arange(steps, dtype=float)
    m1_cons = daily_load(hours, base=0.35, swing=0.10, peak_hour=15.0)
    m2_prod = solar(hours, peak_kw=1.2, sunrise=6.0, sunset=18.0, sharpness=1.5)
    # Mild day-to-day irradiation changes.
    day_factor = np.array([1.0, 0.85, 1.05, 0.9, 1.0, 0.95])[hours.astype(int) // 24]
    m2_prod = m2_prod * day_factor
    write_csv(
        CONFIG_DIR / "rec2_profiles.csv",
        ["m1:consumption", "m2:production"],
        [m1_cons, m2_prod],
        decimals=4,
    )


def make_rec7():
    # 960 steps of 3 minutes (two days).  Member 1 only hosts the shared
    # battery; members 2-5 are consumers; members 6-7 also own PV.
    steps = 960
    hours = np.arange(steps, dtype=float) * 0.05
    day_factor = np.where(hours < 24.0, 1.0, 0.85)
    loads = {
        2: daily_load(hours, base=55.0, swing=18.0, peak_hour=10.0),
        3: daily_load(hours, base=70.0, swing=25.0, peak_hour=8.0),
        4: daily_load(hours, base=45.0, swing=12.0, peak_hour=12.0),
        5: daily_load(hours, base=85.0, swing=30.0, peak_hour=9.0),
        6: daily_load(hours, base=60.0, swing=20.0, peak_hour=11.0),
        7: daily_load(hours, base=50.0, swing=15.0, peak_hour=10.0),
    }
    pv = {
        6: day_factor * solar(hours, peak_kw=260.0, sunrise=6.5, sunset=18.0, sharpness=1.3),
        7: day_factor * solar(hours, peak_kw=300.0, sunrise=6.0, sunset=18.5, sharpness=1.4),
    }
    header = []
    columns = []
    for member in (2, 3, 4, 5):
        header.append(f"m{member}:consumption")
        columns.append(loads[member])
    for member in (6, 7):
        net = pv[member] - loads[member]
        header += [f"m{member}:consumption", f"m{member}:production"]
        columns += [np.maximum(-net, 0.0), np.maximum(net, 0.0)]
    write_csv(CONFIG_DIR / "rec7_profiles.csv", header, columns, decimals=3)


if __name__ == "__main__":
    CONFIG_DIR.mkdir(parents=True, exist_ok=True)
    make_rec2()
    make_rec7()
