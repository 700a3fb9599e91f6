"""The batch CLI workflow, including the human-review pause.

The command line drives the same stages as the library, adding config
files, atomic outputs, stage reports, and rerunnability. This script
exercises `intxn-pipeline` in-process: synth, the paused `all` run, the
resumed run once the reviewed KML exists, and a parameter override.
"""

import json
import tempfile
from pathlib import Path

from intxn_pipeline.cli import main

workdir = Path(tempfile.mkdtemp(prefix="intxn-demo-"))
config = workdir / "pipeline.json"
config.write_text(
    json.dumps(
        {
            "custom_fields": {"stop_type": ["full", "rolling", "none"]},
            "video_base_url": "https://storage.example/clips/",
        },
        indent=2,
    )
)
print(f"workspace: {workdir}\n")

print("== intxn-pipeline synth ==")
main(["synth", "--config", str(config)])

# The synthetic generator writes reviewed.kml for us; hide it first to show
# how `all` pauses for the human review step on real studies.
reviewed = workdir / "reviewed.kml"
stash = workdir / "reviewed.kml.pending"
reviewed.rename(stash)

print("\n== intxn-pipeline all (no reviewed KML yet) ==")
main(["all", "--config", str(config)])

print("\n== reviewer saves reviewed.kml; rerun all ==")
stash.rename(reviewed)
main(["all", "--config", str(config)])

print("\n== stage report beside each output ==")
report = json.loads((workdir / "out" / "trajectories.csv.report.json").read_text())
print(json.dumps(report, indent=2))

print("\n== parameter override: a shorter upstream window ==")
main(["traj", "--config", str(config), "--param", "upstream_ft=100"])
n_points = [
    line.split(",")[-1]
    for line in (workdir / "out" / "trajectories.csv").read_text().splitlines()[1:]
]
print(f"window sizes with upstream_ft=100: {sorted(set(n_points))}")

print("\n== outputs ==")
for path in sorted((workdir / "out").iterdir()):
    print(f"  {path.name}")
