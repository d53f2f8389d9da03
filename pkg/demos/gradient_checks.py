"""
Checking gradients against finite differences
=============================================

The autodiff engine is tested op by op and on the whole captioning loss.
Errors are |ad - fd| / max(1, |fd|) with central differences, step 1e-5.
"""

from changecap.checks import model_checks, op_checks

for name, err in op_checks().items():
    print(f"{name:24s} {err:.2e}")

###############################################################################
# The composed model has tens of thousands of parameters, so each tensor is
# probed at a seeded sample of entries.  Probes whose +-step flips a relu are
# skipped, since the central difference straddles a kink there.

stats = {}
for name, err in model_checks(max_entries=8, stats=stats).items():
    s = stats[name]
    print(f"{name:24s} {err:.2e}   checked {s['checked']}, on kinks {s['skipped']}")
