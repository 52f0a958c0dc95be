"""Regenerate the worked-example forecasts and their expected score reports.

Scores here come from plain-Python transcriptions of the scoring rules and
deliberately share no code with flowcast.  Run from this directory:

    python3 make_golden.py
"""
import csv
import math
import random

rng = random.Random(20240607)
TIMES = ["2024-03-01T00:00", "2024-03-01T01:00", "2024-03-01T02:00", "2024-03-01T03:00"]
S, D = 5, 2
LEVELS = [0.1, 0.25, 0.5, 0.75, 0.9]


def write(name, header, rows):
    with open(name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def energy(scen, y):
    s = len(scen)
    return sum(dist(a, y) for a in scen) / s - sum(dist(a, b) for a in scen for b in scen) / (2 * s * s)


def variogram(scen, y, p=0.5):
    total = 0.0
    for i in range(len(y)):
        for j in range(len(y)):
            sv = sum(abs(s[i] - s[j]) ** p for s in scen) / len(scen)
            total += (abs(y[i] - y[j]) ** p - sv) ** 2
    return total


def pinball_crps(levels, q, y):
    loss = [max(a * (y - v), (a - 1) * (y - v)) for a, v in zip(levels, q)]
    return 2 * sum((levels[k + 1] - levels[k]) * (loss[k] + loss[k + 1]) / 2 for k in range(len(levels) - 1))


# scenario pair
scen = {t: [[round(rng.uniform(0, 1), 4) for _ in range(D)] for _ in range(S)] for t in TIMES}
truth = {t: [round(rng.uniform(0, 1), 4) for _ in range(D)] for t in TIMES}
write(
    "worked_forecast.csv",
    ("time", "scenario_id", "dim", "value"),
    [(t, s, j, scen[t][s][j]) for t in TIMES for s in range(S) for j in range(D)],
)
write("worked_truth.csv", ("time", "dim", "value"), [(t, j, truth[t][j]) for t in TIMES for j in range(D)])
n = len(TIMES)
crps = sum(sum(energy([[r[j]] for r in scen[t]], [truth[t][j]]) for j in range(D)) / D for t in TIMES) / n
es = sum(energy(scen[t], truth[t]) for t in TIMES) / n
vs = sum(variogram(scen[t], truth[t]) for t in TIMES) / n
write(
    "worked_report.csv",
    ("model", "case", "metric", "value"),
    [("worked", "3", "crps", repr(100 * crps)), ("worked", "3", "es", repr(100 * es)), ("worked", "3", "vs", repr(vs))],
)

# quantile pair
qf = {t: sorted(round(rng.uniform(0, 1), 4) for _ in LEVELS) for t in TIMES}
qy = {t: round(rng.uniform(0, 1), 4) for t in TIMES}
write("worked_quantiles.csv", ("time", "alpha", "value"), [(t, a, v) for t in TIMES for a, v in zip(LEVELS, qf[t])])
write("worked_quantiles_truth.csv", ("time", "dim", "value"), [(t, 0, qy[t]) for t in TIMES])
qcrps = sum(pinball_crps(LEVELS, qf[t], qy[t]) for t in TIMES) / n
rows = [("worked_q", "2", "crps", repr(100 * qcrps))]
freqs = []
for k, a in enumerate(LEVELS):
    f = sum(qy[t] <= qf[t][k] for t in TIMES) / n
    freqs.append(abs(f - a))
    rows.append(("worked_q", "2", f"reliability@{a:g}", repr(f)))
rows.append(("worked_q", "2", "reliability_max_dev", repr(max(freqs))))
write("worked_quantiles_report.csv", ("model", "case", "metric", "value"), rows)
