import numpy as np
import pytest

from blockdid.simgen import DGPSpec, Violation, gen_custom


def random_spec(rng, max_n=30, max_t=12, max_g=4, min_pre=1, noise=True):
    """Random staggered design: strictly staggered times, never-treated
    nonempty, total units capped at max_n."""
    T = int(rng.integers(max(4, min_pre + 3), max_t + 1))
    earliest = 1 + min_pre
    G = min(int(rng.integers(1, max_g + 1)), T - earliest + 1)
    times = sorted(
        int(t) for t in rng.choice(np.arange(earliest, T + 1), size=G, replace=False)
    )
    budget = max_n - 1 - G  # one never unit and one unit per cohort reserved
    extra = rng.multinomial(int(rng.integers(0, budget + 1)), np.ones(G + 1) / (G + 1))
    sizes = [1 + int(e) for e in extra[:G]]
    never = 1 + int(extra[G])
    kinds = ["none", "oscillating", "linear"]
    violations = tuple(
        Violation(kinds[int(rng.integers(0, 3))], float(rng.uniform(-1, 1)))
        for _ in range(G)
    )
    return DGPSpec(
        T=T,
        cohorts=tuple((int(t), n) for t, n in zip(times, sizes)),
        never_size=never,
        noise_sd=float(rng.uniform(0.2, 1.5)) if noise else 0.0,
        violations=violations,
        effect=float(rng.uniform(-2, 3)),
        seed=int(rng.integers(0, 2**31)),
    )


def random_panel(rng, **kw):
    return gen_custom(random_spec(rng, **kw))


@pytest.fixture(scope="session")
def toy_sim():
    return gen_custom(
        DGPSpec(
            T=8,
            cohorts=((5, 6), (7, 6)),
            never_size=8,
            noise_sd=0.8,
            violations=(Violation(), Violation("linear", 0.4)),
            effect=2.0,
            seed=20,
        )
    )


@pytest.fixture(scope="session")
def toy_panel(toy_sim):
    return toy_sim.panel
