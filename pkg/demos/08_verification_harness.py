"""The built-in verification harness, as run by ``steinflow check``.

It checks the directional-derivative identity behind SVGD and the ordering
of multi-sample divergences. It also checks the weighted-derivative
estimator, finite-difference gradients of every score, the change-of-variables
density and the exact reductions.
"""
from steinflow.experiments import run_check
from steinflow.trainer import RunConfig

res = run_check(RunConfig(), log=print)
print(f"\n{res.summary['checks'] - res.summary['failed']}/{res.summary['checks']} checks passed")
