import json
import os
import subprocess
import sys

import numpy as np
import pytest

SCRIPT = r"""
import json
import numpy as np
from hazard_ctmc._jit import backend_name
from hazard_ctmc.analysis import kl_recovery
from hazard_ctmc.likelihood import grad_log_marginal_set_exact, log_set_given_time_and_grad
from hazard_ctmc.mcmc import ChainConfig, batch_grad
from hazard_ctmc.model import five_item_model
from hazard_ctmc.sampler import generate_dataset

th = five_item_model().theta
data = generate_dataset(th, 300, with_times=True, rng=0)
g, acc = batch_grad(th, data.item_arrays(), ChainConfig(num_samples=10), seed=1, epoch=0)
lp, gt = log_set_given_time_and_grad(th, [0, 2, 3], 0.7)
out = {
    "backend": backend_name(),
    "samples": [list(s.items) for s in data.samples],
    "times": data.times.tolist(),
    "batch": g.tolist(),
    "accept": acc,
    "exact": grad_log_marginal_set_exact(th, [0, 1, 3, 4]).tolist(),
    "given_time": [lp] + gt.ravel().tolist(),
    "kl": kl_recovery(th, th, draws=20000, rng=0).kl,
}
print(json.dumps(out))
"""


def run(disable):
    env = dict(os.environ, HAZARD_CTMC_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, timeout=600)
    assert res.returncode == 0, res.stderr
    return json.loads(res.stdout)


@pytest.fixture(scope="module")
def both():
    return run(False), run(True)


class TestBackends:
    def test_names(self, both):
        fast, slow = both
        assert fast["backend"] == "numba" and slow["backend"] == "numpy"

    def test_same_random_draws(self, both):
        fast, slow = both
        assert fast["samples"] == slow["samples"]
        np.testing.assert_allclose(fast["times"], slow["times"], rtol=1e-13)

    @pytest.mark.parametrize("key", ["batch", "exact", "given_time"])
    def test_values_agree(self, both, key):
        np.testing.assert_allclose(both[0][key], both[1][key], rtol=1e-9, atol=1e-12)

    def test_scalars(self, both):
        fast, slow = both
        assert fast["accept"] == pytest.approx(slow["accept"], abs=1e-12)
        assert fast["kl"] == pytest.approx(slow["kl"], abs=1e-12)
