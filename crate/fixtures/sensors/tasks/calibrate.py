import csv
import sys

OFFSETS = {"S01": 0.4, "S02": -0.2, "S03": 0.0, "S04": 0.1}
TO_KELVIN = {"C": 273.15}

with open(sys.argv[1], newline="") as f:
    rows = list(csv.DictReader(f))

calibrated = []
for r in rows:
    # ASSERTION_START
    assert r["unit"] == "C", f"reading from {r['sensor_id']} is in {r['unit']!r}"
    # ASSERTION_END
    if not r["reading"]:
        continue
    kelvin = float(r["reading"]) + TO_KELVIN[r["unit"]] + OFFSETS.get(r["sensor_id"], 0.0)
    calibrated.append((r["sensor_id"], kelvin))

print(f"calibrated {len(calibrated)} readings")
