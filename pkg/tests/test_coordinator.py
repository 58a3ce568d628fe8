import json

import numpy as np
import pytest

from coordloop.agents import Counterparty, CounterpartyParams, IRAgent
from coordloop.coordinator import (
    AGENT_FAILURE,
    CONVERGED,
    EVALUATION,
    ITERATION_CAP,
    VERIFICATION,
    CoordinationConfig,
    CoordinationTrajectory,
    adapt_rho,
    coord_run,
    lambda_update,
    residuals,
    z_update,
)
from coordloop.core import Dims, DimsMismatch, PlanTensor
from coordloop.faults import WrongDimsAgent

from protocol import identity_errors

D = Dims(1, 1, 2)


def T(*v):
    return PlanTensor(D, v)


@pytest.fixture
def pair(toy):
    return [IRAgent(toy), Counterparty(CounterpartyParams(demand=4.0, safety_stock=1.0), D)]


def test_z_is_the_mean():
    assert z_update([T(1, 2), T(3, 6)]) == T(2, 4)
    with pytest.raises(ValueError):
        z_update([])
    with pytest.raises(DimsMismatch):
        z_update([T(1, 2), PlanTensor.zeros(Dims(1, 2, 1))])


def test_lambda_update_uses_consensus_minus_proposal():
    assert lambda_update(T(1, 1), T(2, 0.5), T(3, 3), T(1, 5)) == T(5, 0)


def test_residuals_frozen():
    r, s = residuals([T(1, 0), T(3, 0)], T(2, 0), T(0, 0), T(1, 1))
    assert r == pytest.approx(np.sqrt(2.0), abs=1e-15)
    assert s == pytest.approx(np.sqrt(2.0) * 2.0, abs=1e-15)


@pytest.mark.parametrize("r,s,factor", [(11.0, 1.0, 2.0), (1.0, 11.0, 0.5), (5.0, 1.0, 1.0), (10.0, 1.0, 1.0)])
def test_adaptation_branches(r, s, factor):
    assert adapt_rho(T(1, 4), r, s) == T(1 * factor, 4 * factor)


def test_run_converges_and_identities_hold(pair):
    traj = coord_run(pair, CoordinationConfig(mode=EVALUATION))
    assert traj.reason == CONVERGED
    assert traj.final.r < 1e-4 and traj.final.s < 1e-4
    errs = identity_errors(traj)
    assert max(errs.values()) <= 1e-12, errs


def test_iteration_cap_is_recorded(pair):
    traj = coord_run(pair, CoordinationConfig(max_iter=3))
    assert traj.reason == ITERATION_CAP
    assert [r.k for r in traj.records] == [1, 2, 3]


def test_mode_caps():
    assert CoordinationConfig(mode=VERIFICATION).cap == 300
    assert CoordinationConfig(mode=EVALUATION).cap == 2000
    with pytest.raises(ValueError):
        CoordinationConfig(mode="forever")


def test_agent_failure_ends_the_episode(toy):
    traj = coord_run([WrongDimsAgent(IRAgent(toy)), IRAgent(toy)], CoordinationConfig(max_iter=5))
    assert traj.reason == AGENT_FAILURE
    assert "DimsMismatch" in traj.failure


def test_jsonl_round_trip_is_byte_stable(pair):
    traj = coord_run(pair, CoordinationConfig(max_iter=20))
    text = traj.to_jsonl()
    back = CoordinationTrajectory.from_jsonl(text)
    assert back.to_jsonl() == text
    assert back == traj
    assert json.loads(text.splitlines()[0])["type"] == "config"


def test_parallel_agents_match_serial(pair):
    a = coord_run(pair, CoordinationConfig(max_iter=30))
    b = coord_run(pair, CoordinationConfig(max_iter=30), workers=2)
    assert a.to_jsonl() == b.to_jsonl()
