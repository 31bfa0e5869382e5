"""Quick oracle checks run by ``qotl selftest``."""
from __future__ import annotations

import numpy as np

from . import oracles
from .ansatz import Ensemble, build_ala, model_states, random_spec, sample_latents
from .autodiff import local_cost_grad
from .cost import cost_matrix, local_cost_exact
from .qsim import Statevector
from .transport import solve_ot_uniform, solve_ot_weighted


def _random_state(n, rng) -> Statevector:
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return Statevector(n, v / np.linalg.norm(v))


def check_simulator(rng, trials=10):
    err = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 5))
        spec = random_spec(n, int(rng.integers(1, 4)), 2, rng)
        if rng.random() < 0.3 and n > 2:
            spec = build_ala(n, spec.n_layers, 2, 2, rng).with_theta(spec.theta)
        z = sample_latents(1, 2, rng)
        err = max(err, np.abs(model_states(spec, z)[0] - oracles.dense_state(spec, z[0])).max())
    return err < 1e-10, f"max amplitude error {err:.2e}"


def check_local_cost(rng, trials=10):
    err = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 5))
        spec = random_spec(n, 3, 1, rng)
        psi = _random_state(n, rng)
        z = rng.random(1)
        err = max(err, abs(local_cost_exact(psi, spec, z) - oracles.local_cost(psi.amps, spec, z)))
    return err < 1e-10, f"max cost error {err:.2e}"


def check_gradient(rng, trials=10):
    err = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        spec = random_spec(n, int(rng.integers(1, 4)), 1, rng)
        psi = _random_state(n, rng)
        z = rng.random(1)
        g = local_cost_grad(psi, spec, z).values

        def f(theta):
            return local_cost_exact(psi, spec.with_theta(theta.reshape(spec.theta.shape)), z)

        err = max(err, np.abs(g - oracles.finite_difference(f, spec.theta.ravel())).max())
    return err < 1e-6, f"max shift-vs-difference error {err:.2e}"


def check_transport(rng, trials=30):
    err = 0.0
    for _ in range(trials):
        m = int(rng.integers(1, 6))
        c = rng.random((m, m))
        err = max(err, abs(solve_ot_uniform(c)[0] - oracles.brute_force_assignment(c)),
                  abs(solve_ot_uniform(c, "simplex")[0] - oracles.brute_force_assignment(c)))
        shape = (2, 3) if rng.random() < 0.5 else (3, 2)
        c = rng.random(shape)
        p = rng.dirichlet(np.ones(shape[0]))
        q = rng.dirichlet(np.ones(shape[1]))
        err = max(err, abs(solve_ot_weighted(c, p, q)[0] - oracles.enumerate_bfs(c, p, q)))
    return err < 1e-12, f"max loss error {err:.2e}"


def check_identical_ensembles(rng, trials=5):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        spec = random_spec(n, None, 1, rng)
        zs = sample_latents(6, 1, rng)
        ens = Ensemble.from_matrix(model_states(spec, zs))
        worst = max(worst, solve_ot_uniform(cost_matrix(ens, spec, zs))[0])
    return worst < 1e-9, f"largest self-loss {worst:.2e}"


CHECKS = {
    "simulator vs dense matrices": check_simulator,
    "local cost vs dense oracle": check_local_cost,
    "parameter shift vs finite differences": check_gradient,
    "transport vs enumeration": check_transport,
    "loss between identical ensembles": check_identical_ensembles,
}


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    out = []
    for k, (name, fn) in enumerate(CHECKS.items()):
        ok, detail = fn(np.random.default_rng([seed, k]))
        out.append((name, bool(ok), detail))
    return out
