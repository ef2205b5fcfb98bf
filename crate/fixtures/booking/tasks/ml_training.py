import csv
import statistics
import sys

with open(sys.argv[1], newline="") as f:
    rows = list(csv.DictReader(f))

revenue = [float(r["revenue"]) for r in rows]
mu = statistics.fmean(revenue)
sd = statistics.pstdev(revenue)
# ASSERTION_START
assert sd > 0, "revenue has no spread"
# ASSERTION_END
scaled = [(x - mu) / sd for x in revenue]

cats = sorted({r["guest_cat"] for r in rows})
features = []
for r, z in zip(rows, scaled):
    features.append([z] + [1.0 if r["guest_cat"] == c else 0.0 for c in cats])

print(f"{len(features)} rows, {len(features[0])} features")
