import pytest

from coordloop.formulation import FormulationIR
from coordloop.formulation import build as b
from coordloop.scenarios import SHIPPED, load_shipped


def toy_vendor(costs=(1.0, 2.0), cap=5.0) -> FormulationIR:
    """One item, one node, two periods: minimize c_t po_t with po_t <= cap."""
    return FormulationIR(
        sets=(b.iset("i", 1, "item"), b.iset("j", 1, "node"), b.iset("t", len(costs), "period")),
        parameters=(b.param("c", "t", costs, "unit_cost"), b.param("cap", "", [cap], "capacity")),
        variables=(b.var("po", "i,j,t", public=True),),
        constraints=(b.cons("capacity", "i,j,t", "<=", [b.lin("po", "i,j,t")], [b.rhs(b.par("cap"))]),),
        objective=(b.linear("cost", "i,j,t", "po", "i,j,t", b.par("c", "t")),),
    )


@pytest.fixture
def toy():
    return toy_vendor()


@pytest.fixture(scope="session")
def shipped():
    return {n: load_shipped(n) for n in SHIPPED}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
