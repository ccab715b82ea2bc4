"""Metropolis-Hastings over orderings of an observed set.

The target is ``p(sigma | S)``, proportional to the marginal sequence
probability.  Proposals are independent of the current state (independence
sampler), either uniform over orderings or the guided sequential proposal
that picks the next item ``v`` with weight

    u_v = prod_{j in S, j not yet placed, j != v} w[v, j] / (1 + exit rate of sigma + v).

The gradient estimator averages ``grad log p(sigma)`` over the retained chain
states, which approximates ``grad log p(S)``.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .likelihood import set_items, theta_array
from .model import PreconditionError, as_sequence
from .parallel import chunk_bounds, ordered_map
from .rng import as_generator, derive

PROPOSALS = ("guided", "uniform")
CHAIN_CHUNK = 16


@dataclass(frozen=True)
class ChainConfig:
    num_samples: int = 50
    burn_in: int = 10
    proposal: str = "guided"

    def __post_init__(self):
        if self.num_samples < 1:
            raise PreconditionError("num_samples must be at least 1")
        if self.burn_in < 0:
            raise PreconditionError("burn_in must be nonnegative")
        if self.proposal not in PROPOSALS:
            raise PreconditionError(f"proposal must be one of {PROPOSALS}")


@dataclass(frozen=True)
class ProposalDraw:
    sigma: tuple
    log_q: float


def _prep(theta, s):
    th = theta_array(theta)
    items = set_items(s, th.shape[0])
    return th, np.exp(th), items


def draw_guided_proposal(theta, s, rng):
    """One ordering of ``s`` from the guided proposal, with its log probability."""
    th, w, items = _prep(theta, s)
    if items.size == 0:
        raise PreconditionError("the set must be non-empty")
    u = as_generator(rng).random(items.size)
    perm, log_q = kernels.guided_draw(th, w, items, u)
    return ProposalDraw(tuple(int(x) for x in perm), float(log_q))


def draw_uniform_proposal(theta, s, rng):
    th, w, items = _prep(theta, s)
    if items.size == 0:
        raise PreconditionError("the set must be non-empty")
    u = as_generator(rng).random(items.size)
    perm, log_q = kernels.uniform_draw(items, u)
    return ProposalDraw(tuple(int(x) for x in perm), float(log_q))


def proposal_logq(theta, sigma, proposal="guided"):
    """log Q(sigma) under the given proposal."""
    th = theta_array(theta)
    seq = as_sequence(sigma, th.shape[0])
    if proposal == "uniform":
        return float(-np.sum(np.log(np.arange(2, seq.size + 1))))
    return float(kernels.guided_logq(th, np.exp(th), seq))


def acceptance_prob(theta, current, new):
    """min(1, p(new) Q(current) / (p(current) Q(new)))."""
    th = theta_array(theta)
    log_ratio = (
        kernels.marginal_seq_logp(th, np.asarray(new.sigma, dtype=np.int64))
        - kernels.marginal_seq_logp(th, np.asarray(current.sigma, dtype=np.int64))
        + current.log_q
        - new.log_q
    )
    return float(np.exp(min(0.0, log_ratio)))


def mh_step(theta, s, current, rng, proposal="guided"):
    """One independence Metropolis-Hastings step from ``current``."""
    gen = as_generator(rng)
    draw = draw_guided_proposal if proposal == "guided" else draw_uniform_proposal
    new = draw(theta, s, gen)
    if sorted(current.sigma) != sorted(new.sigma):
        raise PreconditionError("current state is not an ordering of s")
    if gen.random() < acceptance_prob(theta, current, new):
        return new
    return current


def _chain_uniforms(rng, k, config):
    return as_generator(rng).random((1 + config.burn_in + config.num_samples, k + 1))


def run_chain(theta, s, config, rng):
    """The full sequence of chain states (initial draw, burn-in and retained)."""
    th, w, items = _prep(theta, s)
    u = _chain_uniforms(rng, items.size, config)
    states = kernels.mh_trace(th, w, items, u, config.proposal == "guided")
    return [tuple(int(x) for x in row) for row in states]


def _chain_grad(th, w, items, u, config, out):
    if items.size <= 1:
        kernels.accumulate_marginal_grad(th, items, 1.0, out)
        return 0
    return kernels.mh_chain(
        th, w, items, u, config.burn_in, config.num_samples, config.proposal == "guided", out
    )


def estimate_grad_log_set(theta, s, config=ChainConfig(), rng=None):
    """MCMC estimate of ``grad log p(S)``; exact when ``|S| <= 1``."""
    th, w, items = _prep(theta, s)
    out = np.zeros_like(th)
    u = _chain_uniforms(rng, items.size, config) if items.size > 1 else None
    _chain_grad(th, w, items, u, config, out)
    return out


def batch_grad(theta, item_arrays, config, seed, epoch, threads=None):
    """Mean over samples of the MCMC gradient estimate.

    The chain for sample ``d`` in epoch ``epoch`` is driven by the stream
    ``derive(seed, "mcmc", epoch, d)``.  Returns ``(grad, acceptance rate)``.
    Raises ``FloatingPointError`` with the offending sample index if any
    per-sample estimate is not finite.
    """
    th = theta_array(theta)
    w = np.exp(th)
    count = len(item_arrays)
    steps = config.burn_in + config.num_samples

    def run(bounds):
        a, b = bounds
        part = np.zeros_like(th)
        accepted = 0
        moves = 0
        for d in range(a, b):
            items = item_arrays[d]
            local = np.zeros_like(th)
            if items.size > 1:
                u = derive(seed, "mcmc", epoch, d).random((1 + steps, items.size + 1))
                accepted += _chain_grad(th, w, items, u, config, local)
                moves += steps
            else:
                _chain_grad(th, w, items, None, config, local)
            if not np.all(np.isfinite(local)):
                raise FloatingPointError(f"non-finite gradient for sample {d}")
            part += local
        return part, accepted, moves

    parts = ordered_map(run, chunk_bounds(count, CHAIN_CHUNK), threads)
    total = np.zeros_like(th)
    accepted = moves = 0
    for part, acc, mv in parts:
        total += part
        accepted += acc
        moves += mv
    return total / count, (accepted / moves if moves else 1.0)


def mh_kernel_matrix(theta, s, proposal="guided"):
    """Explicit transition matrix of the sampler over all orderings of ``s``.

    Returns ``(orderings, K)`` with ``K[i, j]`` the probability of moving
    from ordering ``i`` to ordering ``j`` in one step.
    """
    th, w, items = _prep(theta, s)
    logp = kernels.enumerate_logp(th, items)
    perm = np.sort(items)
    orders = []
    logq = np.empty(logp.size)
    for c in range(logp.size):
        orders.append(tuple(int(x) for x in perm))
        logq[c] = proposal_logq(th, perm, proposal)
        kernels.next_permutation(perm)
    q = np.exp(logq)
    ratio = (logp[None, :] - logp[:, None]) + (logq[:, None] - logq[None, :])
    kmat = q[None, :] * np.exp(np.minimum(0.0, ratio))
    np.fill_diagonal(kmat, 0.0)
    np.fill_diagonal(kmat, 1.0 - kmat.sum(axis=1))
    return orders, kmat
