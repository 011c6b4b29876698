import numpy as np
import pytest

from modrec import datagen


def finite_difference_check(build, params, h=1e-5, rtol=1e-4, atol=1e-7,
                            max_coords=20, seed=0):
    """Compare analytic gradients of build() (a fresh scalar graph over the
    given parameters) against central finite differences on a random subset
    of coordinates per parameter."""
    for p in params:
        p.zero_grad()
    build().backward()
    analytic = {p.name: p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)
    for p in params:
        flat = p.data.reshape(-1)
        coords = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = build().item()
            flat[c] = orig - h
            fm = build().item()
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            ana = analytic[p.name].reshape(-1)[c]
            tol = atol + rtol * max(abs(numeric), abs(ana))
            assert abs(numeric - ana) <= tol, (
                f"{p.name}[{c}]: analytic {ana}, finite-diff {numeric}"
            )


@pytest.fixture(scope="session")
def tiny_data():
    """Small catalog + dataset reused by fast integration tests."""
    return datagen.generate_synthetic(
        n_items=120, n_users=160, n_clusters=8, n_v=2, n_t=2, d_v=8, d_t=8, seed=7
    )
