import csv
import sys
from datetime import datetime

with open(sys.argv[1], newline="") as f:
    rows = list(csv.DictReader(f))

by_day = {}
for r in rows:
    if not r["reading"]:
        continue
    # ASSERTION_START
    assert r["recorded_at"][4:5] == "-", f"unexpected date {r['recorded_at']!r}"
    # ASSERTION_END
    day = datetime.strptime(r["recorded_at"], "%Y-%m-%d").date()
    by_day.setdefault(day, []).append(float(r["reading"]))

for day in sorted(by_day):
    xs = by_day[day]
    print(day.isoformat(), f"{sum(xs) / len(xs):.2f}")
