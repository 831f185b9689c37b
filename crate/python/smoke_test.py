"""Smoke test for the Python extension.

Build and install it first:

    pip install --no-build-isolation ./crates/py

then run ``python python/smoke_test.py`` from the repository root.
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import seasonal_mpp_py as sm

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def check(cond, what):
    if not cond:
        sys.exit("FAILED: " + what)
    print("ok:", what)


def main():
    check(abs(sm.expected_truncation_mass() - 0.9999578) < 1e-6, "truncation mass for N = 50")

    corpus = sm.Corpus.from_csv(str(FIXTURES / "landfalls.csv"), 10, 1900, 2010)
    check(corpus.total_events == 239, "fixture has 239 events")
    check(corpus.n_periods == 11 and sum(corpus.counts()) == 239, "eleven decadal periods")
    check(all(0 < t < 1 for t in corpus.times(0)), "times rescaled into (0, 1)")

    draws = sm.fit(corpus, n_iter=300, burn_in=100, thin=10, seed=5)
    check(len(draws) == 20, "20 retained draws")
    rho = draws.parameter("rho")
    check(all(0 < r < 1 for r in rho), "rho inside (0, 1)")

    grid = [(i + 0.5) / 400 for i in range(400)]
    dens = draws.time_density(10, grid)
    check(abs(sum(dens) / 400 - 1.0) < 1e-2, "time density integrates to about 1")

    lam = draws.cumulative_intensity(10, 0.0, 1.0)
    gam = draws.gamma(10)
    check(all(math.isclose(a, b, rel_tol=1e-9) for a, b in zip(lam, gam)), "Lambda(0, 1) equals gamma")
    p = draws.prob_at_least_one(10, 0.2, 0.4)
    check(all(0 <= x <= 1 for x in p), "probabilities in [0, 1]")

    again = sm.Draws.from_json(draws.to_json())
    check(again.parameter("alpha") == draws.parameter("alpha"), "draws round-trip through JSON")
    again_fit = sm.fit(corpus, n_iter=300, burn_in=100, thin=10, seed=5)
    check(again_fit.parameter("alpha") == draws.parameter("alpha"), "fixed seed reproduces the fit")

    with tempfile.TemporaryDirectory() as out:
        manifest = json.loads(sm.run_cli(["fit", "--config", str(FIXTURES / "fixture.toml"), "--out", out]))
        check(any(e["file"] == "draws.json" for e in manifest["outputs"]), "CLI fit writes draws.json")

    try:
        sm.fit(corpus, model="wind only")
    except ValueError:
        check(True, "unknown model rejected")
    else:
        check(False, "unknown model rejected")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
