import csv
import sys
from collections import defaultdict

with open(sys.argv[1], newline="") as f:
    rows = list(csv.DictReader(f))

totals = defaultdict(float)
for r in rows:
    amount = float(r["revenue"])
    # ASSERTION_START
    assert amount >= 0, f"negative revenue {amount} for {r['name']}"
    # ASSERTION_END
    totals[r["location"]] += amount

for location, total in sorted(totals.items()):
    print(f"{location}\t{total:.2f}")
