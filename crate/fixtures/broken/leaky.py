import csv
import sys

with open(sys.argv[1], newline="") as f:
    rows = list(csv.DictReader(f))

# ASSERTION_START
names = [r["name"] for r in rows]
assert all(names), "every booking needs a name"
# ASSERTION_END
print(f"{len(names)} guests")
