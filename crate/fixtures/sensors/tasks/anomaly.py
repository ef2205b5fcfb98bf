import csv
import statistics
import sys

with open(sys.argv[1], newline="") as f:
    rows = list(csv.DictReader(f))

# ASSERTION_START
missing = sorted({r["sensor_id"] for r in rows if not r["reading"]})
assert not missing, f"missing readings from {missing}"
# ASSERTION_END
readings = [float(r["reading"]) for r in rows]
mu = statistics.fmean(readings)
sd = statistics.pstdev(readings)
flagged = [r["sensor_id"] for r, x in zip(rows, readings) if sd and abs(x - mu) > 3 * sd]
print(f"{len(flagged)} anomalies {sorted(set(flagged))}")
