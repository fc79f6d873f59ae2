import itertools

import pytest

from pkbp.core import make_vms
from pkbp.gamma import GammaTable, get_table


@pytest.fixture(scope="session")
def table05():
    return get_table(0.05, 64)


@pytest.fixture(scope="session")
def toy_table():
    # gamma(4) = gamma(5) = 2, as in the four-VM worked example
    return GammaTable.from_gamma([0, 1, 2, 2, 2, 2])


@pytest.fixture
def example_vms():
    return make_vms([(1.4, 0.5), (0.7, 0.6), (0.4, 0.4), (0.7, 0.3)])


def feasible_assignments(intervals, n_hosts, capacity, table, eps=1e-9):
    """Every host assignment of ``intervals`` that respects the robust load."""
    from pkbp.core import direct_load

    out = []
    for assign in itertools.product(range(n_hosts), repeat=len(intervals)):
        ok = True
        for h in range(n_hosts):
            members = [iv for iv, a in zip(intervals, assign) if a == h]
            if len(members) > table.n_max or direct_load(members, table) > capacity + eps:
                ok = False
                break
        if ok:
            out.append(assign)
    return out
