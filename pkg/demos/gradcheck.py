"""Finite-difference check of every parameter group in a small model."""

from cavsync.harness import run_gradcheck

report = run_gradcheck()
for name, group in sorted(report["groups"].items()):
    print(f"{name:<24} {group['max_rel_error']:.2e}")
print("passed" if report["passed"] else "FAILED")
