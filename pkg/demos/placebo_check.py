"""Placebo test on A/A traffic: a healthy split against a broken one."""

import numpy as np

from abx.analysis import placebo_test
from abx.simulate import default_config, generate_traffic

cfg = default_config(n_users=25_000, aa_days=5, ab_days=1, bot_fraction=0.0, seed=9)
traffic = generate_traffic(cfg, threads=4)
aa = traffic.session_frame()
agents = traffic.user_agents()

rep = placebo_test(aa, agents)
print(f"randomized:  {rep.n_significant}/{rep.m} categories below 0.05, "
      f"smallest p {rep.p_values.min():.2e}, verdict {rep.verdict}")

# break the split: half of the users who opened the most popular category are forced
# into treatment (forcing all of them would separate the logistic fit perfectly)
top = aa.categoryId.value_counts().index[0]
fans = sorted(set(aa.loc[aa.categoryId == top, "anonyId"]))
forced = set(np.random.default_rng(1).choice(fans, len(fans) // 2, replace=False))
broken = aa.assign(treat=np.where(aa.anonyId.isin(forced), 1, aa.treat))
rep = placebo_test(broken, agents)
worst = rep.categories[int(np.argmin(rep.p_values))]
print(f"broken:      category {worst} (forced {top}) has p {rep.p_values.min():.2e} "
      f"(threshold {rep.threshold:.1e}), verdict {rep.verdict}")
