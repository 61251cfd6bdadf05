# %% [markdown]
# # Benchmark protocols
#
# Small versions of the evaluation protocols.  Each has a command line
# twin (``nndm bench`` for the L1 error, for instance), and larger ``reps``
# values give tighter numbers.

# %%
from nndm import FitOptions
from nndm.evaluation import coverage_experiment, get_density, k_sweep, l1_error

gs = get_density("gs")
rep = l1_error(gs, FitOptions(delta0sq="cv"), n=200, n_t=500, R=5, seed=1)
print("GS n=200: mean L1 %.3f (se %.3f)" % (rep.mean, rep.se))

# %%
cov = coverage_experiment(gs, n=500, n_t=100, R_cov=5, k=8, level=0.95, seed=1, M=500)
print("GS coverage %.3f, mean interval length %.3f" % (cov.coverage, cov.length))

# %%
table = k_sweep(get_density("t", 1), n=200, n_t=500, k_values=[2, 5, 10, 20], reps=3, seed=2)
for k, ll in table.rows():
    print(f"k = {k:3d}   mean out-of-sample log-likelihood = {ll:.4f}")
