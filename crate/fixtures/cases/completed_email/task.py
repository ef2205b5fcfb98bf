import csv
import sys

with open(sys.argv[1], newline="") as f:
    rows = list(csv.DictReader(f))

completed = [r for r in rows if r["status"] == "COMPLETED"]
# ASSERTION_START
for r in completed:
    assert r["email"], f"completed booking for {r['name']} has no email"
# ASSERTION_END

per_domain = {}
for r in completed:
    user, domain = r["email"].split("@")
    per_domain[domain] = per_domain.get(domain, 0) + 1

for domain, n in sorted(per_domain.items()):
    print(f"{domain}\t{n}")
