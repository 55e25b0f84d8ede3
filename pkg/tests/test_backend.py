import json
import os
import subprocess
import sys

import numpy as np

from strcgp import backend_name
from strcgp.filtering import filter_smooth
from strcgp.ssm import KernelSpec
from strcgp.weights import WeightPolicy

SCRIPT = """
import json, numpy as np
from strcgp import backend_name
from strcgp.filtering import filter_smooth
from strcgp.ssm import KernelSpec
from strcgp.weights import WeightPolicy
rng = np.random.default_rng(3)
spec = KernelSpec("matern32", 0.3, 1.0, "matern32", 0.5, 1.0, 0.1)
grid = rng.uniform(-1, 1, (4, 2))
y = rng.standard_normal((12, 4)); y[5, 2] = 9.0
obs = np.ones_like(y, bool); obs[7, 1] = False
tr, sm = filter_smooth(spec, np.linspace(0, 1, 12), grid, y, WeightPolicy.adaptive(), obs)
mu, var = sm.marginals()
print(json.dumps({"backend": backend_name(), "mu": mu.tolist(), "var": var.tolist(),
                  "w": np.nan_to_num(tr.w, nan=-1.0).tolist(), "lp": tr.logpdf.tolist()}))
"""


def _run(disable):
    env = dict(os.environ, STRCGP_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_numpy_fallback_matches_numba():
    fast, slow = _run(False), _run(True)
    assert slow["backend"] == "numpy"
    assert fast["backend"] in ("numba", "numpy")
    for key in ("mu", "var", "w", "lp"):
        np.testing.assert_allclose(np.array(fast[key]), np.array(slow[key]), rtol=1e-10, atol=1e-12)


def test_backend_in_process_is_reported():
    assert backend_name() in ("numba", "numpy")
    spec = KernelSpec("exponential", 0.5, 1.0, noise_variance=0.2)
    tr, _ = filter_smooth(spec, np.linspace(0, 1, 5), None, np.zeros((5, 1)), WeightPolicy.constant())
    assert np.all(np.isfinite(tr.logpdf))
