"""Why a contiguous layout serialises on one target.

A contiguous dataset lives under a single dkey, so every request lands on
the same target queue. Chunking spreads the same bytes over many dkeys.
"""

from daosim.bench import WorkloadSpec, csv_header, run_workload

print(csv_header())
for layout in ("contiguous", "chunked:512"):
    report = run_workload(WorkloadSpec("legion", layout=layout, workers=4))
    print(report.csv_row())
    print("  requests per target:", report.served)

# two ways to move data from compute tasks to I/O tasks
for method in ("box", "subset"):
    r = run_workload(WorkloadSpec("pio", workers=16, niotasks=4, method=method,
                                  dims=(256, 8)))
    print(f"pio {method}: {r.messages} messages")
