"""Simulate a small experiment, clean the log and estimate the treatment effect.

Run with ``python3 demos/pipeline_walkthrough.py [workdir]``.  This is the same
sequence the ``abx`` command runs, called in-process so the intermediate
objects can be inspected.
"""

import sys
import tempfile
from pathlib import Path

from abx import report
from abx.analysis import fit_full_model, fit_simple_model, fit_zone_models
from abx.simulate import default_config, generate_traffic
from abx.taxonomy import compute_category_baselines
from abx.weblog import filter_bots, flag_double_assignment, read_log, reconstruct_sessions, write_log

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="abx-demo-"))
work.mkdir(parents=True, exist_ok=True)

# 40k users: five A/A days, then twenty A/B days
cfg = default_config(n_users=40_000, seed=2016)
traffic = generate_traffic(cfg, threads=4)
n = write_log(traffic.records(), work / "log.ndjson")
print(f"{n:,} log records in {work / 'log.ndjson'}")
print("emitted:", {k: v for k, v in traffic.manifest().items() if k in ("users", "beacons", "clicks")})

kept, bot_report = filter_bots(read_log(work / "log.ndjson"))
sessions, session_report = reconstruct_sessions(kept, cfg.cutover, cfg.taxonomy())
print(f"bots removed: {bot_report.declared_bot_records:,} declared, "
      f"{bot_report.heuristic_bot_records:,} heuristic; orphan clicks {session_report.orphan_clicks}")

aa = sessions[sessions.stage == "AA"]
ab = sessions[sessions.stage == "AB"]
reassigned = flag_double_assignment(ab)
print(f"double-assigned: {reassigned.fraction_users_double:.1%} of users, "
      f"{reassigned.fraction_sessions_double:.1%} of sessions")

baselines = compute_category_baselines(aa)
simple = fit_simple_model(ab)
full = fit_full_model(ab, baselines)
print()
print(report.full_block(full, simple))

zones = fit_zone_models(ab, baselines, cfg.taxonomy(), threads=4)
for z, res in sorted(zones.results.items()):
    t = res.test("treat")
    truth = cfg.zone_ate.get(z, 0.0)
    print(f"zone {z:>2}: treat {t.estimate:+.4f} ({t.se:.4f})   configured {truth:+.3f}")
