"""Paired significance testing over per-run scores.

Ten paired runs where one model always wins give the exact two-sided
p = 2/1024: with every difference positive, only the two extreme sign
assignments are at least as lopsided as what was observed.
"""

from inceptive.metrics import wilcoxon_signed_rank
from inceptive.tensor import Rng

rng = Rng(2024)
baseline = 63.5 + rng.normal(10, scale=0.8)
enriched = baseline + 8.8 + rng.normal(10, scale=0.4)  # wins every run

w, p = wilcoxon_signed_rank(baseline, enriched)
gain = (enriched.mean() - baseline.mean()) / baseline.mean() * 100

print("per-run scores (baseline vs enriched):")
for a, b in zip(baseline, enriched):
    print(f"  {a:6.2f}  {b:6.2f}  diff {b - a:+.2f}")
print(f"\nW = {w}")
print(f"exact two-sided p = {p}  (= 2 / 2^10 = {2 / 1024})")
print(f"mean gain = {gain:+.2f}%")

# a noisy pairing where the winner is unclear
b2 = baseline + rng.normal(10, scale=1.0)
w2, p2 = wilcoxon_signed_rank(baseline, b2)
print(f"\nnoisy comparison for contrast: W = {w2}, p = {p2:.4f}")
