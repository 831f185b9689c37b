"""Writes the synthetic landfall fixture used by the tests and examples.

The file is fully determined by SEED; rerunning the script reproduces it
byte for byte. Only ``random.Random.random`` is used so the output does not
depend on the Python version.
"""

import argparse
import datetime as dt
import math
import random
from pathlib import Path

SEED = 20100531

# (category, count, lowest mph, highest mph), winds in 5 mph steps
COMPOSITION = [
    ("TD", 4, 30, 35),
    ("TS", 63, 40, 70),
    ("HC1", 54, 75, 95),
    ("HC2", 42, 100, 110),
    ("HC3", 59, 115, 130),
    ("HC4", 14, 135, 155),
    ("HC5", 3, 160, 190),
]
EARLY_YEARS = (1900, 2000, 204)
LATE_YEARS = (2001, 2010, 35)
NO_FACTORS_FROM = 2005
SEASON_START = (5, 1)
SEASON_DAYS = 214


def pick(rng, items):
    return items[min(int(rng.random() * len(items)), len(items) - 1)]


def normal(rng):
    u1, u2 = rng.random(), rng.random()
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


def season_day(rng):
    # Two-bump shape: a small early-season hump and the main late-summer peak.
    if rng.random() < 0.15:
        centre, spread = 50.0, 20.0
    else:
        centre, spread = 125.0, 25.0
    day = int(round(centre + spread * normal(rng)))
    return max(0, min(SEASON_DAYS - 1, day))


def factors(year):
    s = (year - 1900) / 110.0
    inflation = 0.05 * math.exp(3.0 * s)
    wealth = 0.2 * math.exp(1.6 * s)
    population = 0.3 + 0.7 * s
    return inflation, wealth, population


def build(seed=SEED):
    rng = random.Random(seed)
    categories = []
    for name, count, lo, hi in COMPOSITION:
        steps = list(range(lo, hi + 1, 5))
        categories.extend((name, pick(rng, steps)) for _ in range(count))
    # Fisher-Yates with rng.random only.
    for i in range(len(categories) - 1, 0, -1):
        j = min(int(rng.random() * (i + 1)), i)
        categories[i], categories[j] = categories[j], categories[i]

    years = []
    for first, last, n in (EARLY_YEARS, LATE_YEARS):
        span = list(range(first, last + 1))
        years.extend(pick(rng, span) for _ in range(n))

    rows = []
    for (name, mph), year in zip(categories, years):
        start = dt.date(year, *SEASON_START)
        date = start + dt.timedelta(days=season_day(rng))
        # Damage grows with wind; tropical depressions leave none recorded.
        if name == "TD" or rng.random() < 0.08:
            base = ""
        else:
            log_std = -2.0 + 0.045 * (mph - 40) + 1.2 * normal(rng)
            inflation, wealth, population = factors(year)
            base = "%.6g" % (math.exp(log_std) * inflation * wealth * population)
        if year >= NO_FACTORS_FROM:
            trio = ("", "", "")
        else:
            trio = tuple("%.6f" % f for f in factors(year))
        rows.append((date.isoformat(), str(mph), base) + trio + (name,))
    rows.sort(key=lambda r: (r[0], int(r[1])))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    here = Path(__file__).resolve().parent.parent
    parser.add_argument("--out", type=Path, default=here / "fixtures" / "landfalls.csv")
    args = parser.parse_args()
    header = ("date", "max_wind_mph", "base_damage", "inflation", "wealth_per_capita", "population", "category")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in build():
            fh.write(",".join(row) + "\n")


if __name__ == "__main__":
    main()
