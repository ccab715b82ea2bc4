"""Forward simulation of the cumulative CTMC observed at an Exp(1) time.

Each draw consumes a fixed block of ``2n + 1`` uniforms (observation time,
then one holding time and one item choice per jump), so a draw is a pure
function of its uniforms.  Datasets are generated in fixed chunks whose
streams are derived from ``(seed, chunk index)``, which makes the output
independent of the number of threads.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .likelihood import theta_array
from .model import Dataset, ItemSet, PreconditionError
from .parallel import chunk_bounds, ordered_map
from .rng import as_generator, child_seed, derive

DATASET_CHUNK = 256


@dataclass(frozen=True)
class TimedTrajectory:
    sequence: tuple
    holding_times: np.ndarray
    t_obs: float

    @property
    def jump_times(self):
        return np.cumsum(self.holding_times)


def _one_draw(theta, rng):
    th = theta_array(theta)
    n = th.shape[0]
    u = as_generator(rng).random(2 * n + 1)
    seq = np.empty(n, dtype=np.int64)
    hold = np.empty(n)
    k, t_obs = kernels.sample_trajectory(th, u, seq, hold)
    return th, seq[:k], hold[:k], t_obs


def sample_marginal_set(theta, rng):
    """Draw one observed set."""
    th, seq, _, _ = _one_draw(theta, rng)
    return ItemSet.from_items(th.shape[0], seq)


def sample_timed_trajectory(theta, rng):
    """Draw the ordered items, holding times and observation time of one sample."""
    _, seq, hold, t_obs = _one_draw(theta, rng)
    return TimedTrajectory(tuple(int(x) for x in seq), hold.copy(), float(t_obs))


def sample_trajectories(theta, count, seed, label="trajectories", threads=None):
    """``count`` independent trajectories as padded arrays.

    Returns ``(seqs, lens, holds, t_obs)`` where row ``d`` of ``seqs`` holds
    ``lens[d]`` valid items.
    """
    th = theta_array(theta)
    n = th.shape[0]
    seqs = np.full((count, n), -1, dtype=np.int64)
    lens = np.zeros(count, dtype=np.int64)
    holds = np.zeros((count, n))
    tobs = np.zeros(count)

    def run(job):
        idx, (a, b) = job
        u = derive(seed, label, idx).random((b - a, 2 * n + 1))
        kernels.sample_batch(th, u, seqs[a:b], lens[a:b], holds[a:b], tobs[a:b])

    ordered_map(run, enumerate(chunk_bounds(count, DATASET_CHUNK)), threads)
    return seqs, lens, holds, tobs


def generate_dataset(theta, count, with_times=False, rng=None, threads=None):
    """``count`` independent observed sets, optionally with their observation times."""
    if count < 1:
        raise PreconditionError("count must be at least 1")
    seed = child_seed(rng) if isinstance(rng, np.random.Generator) else (rng or 0)
    th = theta_array(theta)
    seqs, lens, _, tobs = sample_trajectories(th, count, seed, "dataset", threads)
    samples = [ItemSet.from_items(th.shape[0], seqs[d, :lens[d]]) for d in range(count)]
    names = getattr(theta, "item_names", None)
    return Dataset(th.shape[0], samples, tobs if with_times else None, names)
