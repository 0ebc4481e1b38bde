"""
The command line end to end
===========================

simulate -> ingest -> fit -> tradeoff -> report on the bundled six-family
spec, driven through ``gpuscale.cli.main`` in a temporary directory. The same
steps work from a shell as ``gpuscale simulate ...`` and so on.
"""

import json
import tempfile
from importlib.resources import files
from pathlib import Path

from gpuscale.cli import main

spec = files("gpuscale").joinpath("data/paper_like.spec")
out = Path(tempfile.mkdtemp(prefix="gpuscale-"))

main(["simulate", str(spec), "--out-dir", str(out / "runs")])
main(["ingest", str(out / "runs"), "--out-dir", str(out)])
main(["fit", str(out / "metrics.json"), "--out-dir", str(out)])
main(["tradeoff", str(out / "metrics.json"), "--out-dir", str(out)])
main(["report", str(out / "metrics.json"), str(out / "fits.json"), str(out / "recommendations.json"),
      "--out-dir", str(out / "report")])

# one fit per model family
for f in json.loads((out / "fits.json").read_text())["fits"]:
    fit = f["fit"]
    print(f"{f['group']['model']:12s} beta {fit['beta']:.3f} +/- {fit['beta_stderr']:.3f}  R^2 {fit['r_squared']:.4f}")

print((out / "report" / "scaling_curves.csv").read_text().splitlines()[:4])
