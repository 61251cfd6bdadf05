# %% [markdown]
# # Bivariate density
#
# A two-component correlated Gaussian mixture in two dimensions.  The
# estimate is evaluated on a regular lattice (ready for a contour plot) and
# compared with the truth through a Monte Carlo L1 ratio.

# %%
import numpy as np

import nndm
from nndm.evaluation import get_density, l1_ratio

truth = get_density("mg", 2)
train = truth.sample(300, np.random.default_rng(3))
model = nndm.fit(train, k=10, delta0sq="cv")

# %% Lattice evaluation
ticks = np.linspace(-5, 5, 21)
gx, gy = np.meshgrid(ticks, ticks)
lattice = np.column_stack([gx.ravel(), gy.ravel()])
z = model.mean_density(lattice).reshape(gx.shape)
print("lattice max density %.4f at" % z.max(), lattice[z.argmax()])

# %% L1 ratio on fresh points from the truth
test = truth.sample(2000, np.random.default_rng(4))
print("L1 ratio:", round(l1_ratio(model.logpdf(test), truth.logpdf(test)), 4))

# %% A few posterior draws, summarized by their value at the origin
draws = model.sample(200, seed=5)
vals = draws.evaluate(np.zeros(2))[:, 0]
print("f(0): mean of draws %.4f, closed form %.4f" % (vals.mean(), model.mean_density(np.zeros(2))))
