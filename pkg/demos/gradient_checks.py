"""Check analytic gradients against finite differences, then break one on purpose."""
# %%

from srx.gradcheck import REGISTRY, format_summary, run_suite

print(len(REGISTRY), "registered checks")

# %%
results, elapsed = run_suite(seeds=range(2), names=["matmul", "softmax", "layer_norm", "gcn_layer"])
print(format_summary(results, elapsed))

# %%
# Negative control: corrupt the softmax backward pass. Only the checks that
# route through softmax should fail.
results, _ = run_suite(seeds=range(1), names=["matmul", "softmax"], corrupt="softmax")
for r in results:
    print(r.name, "PASS" if r.passed else "FAIL", f"{r.error:.2e}")
