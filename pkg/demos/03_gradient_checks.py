"""Finite-difference checks of every operator, then of the full model.

Run: python3 demos/03_gradient_checks.py [--full]
The full-model check samples 1% of each parameter tensor at 224x224 and
takes a couple of minutes; without --full a 64x64 toy network is used.
"""
import sys

from mudiknn.checks import map_module_check, model_check, operator_checks
from mudiknn.model import BackboneConfig

for name, err in operator_checks().items():
    print(f"{name:18s} {err:.2e}")
print(f"{'map_module':18s} {map_module_check():.2e}")

stats = {}
if "--full" in sys.argv:
    worst = model_check(stats=stats)
else:
    worst = model_check(fraction=0.05, backbone=BackboneConfig(widths=(4, 4, 8)), patch=64, stats=stats)
print(f"{'model':18s} {worst:.2e}  ({stats['checked']} elements, {stats['skipped']} skipped at ReLU kinks)")
