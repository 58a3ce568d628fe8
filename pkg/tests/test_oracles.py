import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from coordloop.faults import FaultSpec, inject
from coordloop.formulation import structurally_equal
from coordloop.oracles import (
    CODEFIX,
    DEFAULT_TIMEOUT,
    REFORMULATE,
    TIMEOUT_ENV,
    ExternalOracle,
    GroundTruthOracle,
    NoopOracle,
    OracleFailure,
    RepairProposal,
    RepairRequest,
    make_oracle,
    oracle_timeout,
    proposal_from_json,
)


@pytest.fixture
def case(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("cost_on_data"), s)
    return s, c


def request(s, c, action=REFORMULATE):
    return RepairRequest(s, c.ir, action, 0, None, ("probe failed",))


def script(tmp_path, body):
    p = tmp_path / "oracle.py"
    p.write_text("import json, sys, time\nreq = json.load(sys.stdin)\n" + body)
    return f"exec:{sys.executable} {p}"


def test_request_wire_format(case):
    s, c = case
    d = request(s, c).to_json()
    assert sorted(d) == ["attempt", "data", "evidence", "formulation", "local_validation", "requested_action", "scenario"]
    assert d["scenario"]["name"] == "example1"
    assert d["local_validation"] == ["probe failed"]
    json.dumps(d)


def test_ground_truth_patch_or_reference(case):
    s, c = case
    o = GroundTruthOracle(s.reference, c.repair)
    assert o.repair(request(s, c, CODEFIX)).patch == c.repair
    full = o.repair(request(s, c, REFORMULATE))
    assert full.action == REFORMULATE and structurally_equal(full.formulation, s.reference)
    big = GroundTruthOracle(s.reference, c.repair * 3)
    assert big.repair(request(s, c, CODEFIX)).formulation is s.reference


def test_noop_hands_back_the_input(case):
    s, c = case
    out = NoopOracle().repair(request(s, c))
    assert out.formulation is c.ir


def test_exec_oracle_reformulate(tmp_path, case):
    s, c = case
    reply = json.dumps({"action": "Reformulate", "formulation": s.reference.to_dict()})
    o = ExternalOracle(script(tmp_path, f"assert req['requested_action'] == 'Reformulate'\nprint({reply!r})\n"))
    out = o.repair(request(s, c))
    assert structurally_equal(out.formulation, s.reference)


def test_exec_oracle_codefix(tmp_path, case):
    s, c = case
    reply = json.dumps(RepairProposal(CODEFIX, patch=c.repair).to_json())
    out = ExternalOracle(script(tmp_path, f"print({reply!r})\n")).repair(request(s, c, CODEFIX))
    assert out.patch == c.repair


@pytest.mark.parametrize(
    "body,msg",
    [
        ("print('not json')\n", "invalid JSON"),
        ("print(json.dumps({'action': 'CodeFix'}))\n", "needs an action"),
        ("print(json.dumps({'action': 'Reformulate', 'formulation': {'sets': 3}}))\n", "malformed"),
        ("sys.exit(3)\n", "exited 3"),
    ],
)
def test_exec_oracle_failures(tmp_path, case, body, msg):
    s, c = case
    with pytest.raises(OracleFailure, match=msg):
        ExternalOracle(script(tmp_path, body)).repair(request(s, c))


def test_timeout_from_environment(tmp_path, case, monkeypatch):
    s, c = case
    monkeypatch.setenv(TIMEOUT_ENV, "0.5")
    assert oracle_timeout() == 0.5
    with pytest.raises(OracleFailure, match="timed out"):
        ExternalOracle(script(tmp_path, "time.sleep(5)\n")).repair(request(s, c))


def test_timeout_default_and_validation(monkeypatch):
    monkeypatch.delenv(TIMEOUT_ENV, raising=False)
    assert oracle_timeout() == DEFAULT_TIMEOUT == 120
    monkeypatch.setenv(TIMEOUT_ENV, "soon")
    with pytest.raises(ValueError):
        oracle_timeout()
    monkeypatch.setenv(TIMEOUT_ENV, "-1")
    with pytest.raises(ValueError):
        oracle_timeout()


def test_http_oracle(case):
    s, c = case
    seen = {}
    reply = json.dumps({"action": "Reformulate", "formulation": s.reference.to_dict()}).encode()

    class H(BaseHTTPRequestHandler):
        def do_POST(self):
            seen["body"] = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            self.send_response(200)
            self.end_headers()
            self.wfile.write(reply)

        def log_message(self, *a):
            pass

    srv = HTTPServer(("127.0.0.1", 0), H)
    t = threading.Thread(target=srv.handle_request, daemon=True)
    t.start()
    try:
        out = ExternalOracle(f"http://127.0.0.1:{srv.server_port}/repair", timeout=10).repair(request(s, c))
    finally:
        t.join(5)
        srv.server_close()
    assert seen["body"]["requested_action"] == "Reformulate"
    assert structurally_equal(out.formulation, s.reference)


def test_http_oracle_unreachable(case):
    s, c = case
    with pytest.raises(OracleFailure):
        ExternalOracle("http://127.0.0.1:9/none", timeout=2).repair(request(s, c))


def test_make_oracle_dispatch(shipped):
    ref = shipped["example1"].reference
    assert make_oracle("ground_truth", ref).kind == "ground_truth"
    assert make_oracle("noop").kind == "noop"
    assert make_oracle("external", target="exec:true").transport == "exec"
    with pytest.raises(ValueError):
        make_oracle("ground_truth")
    with pytest.raises(ValueError):
        make_oracle("external")
    with pytest.raises(ValueError):
        make_oracle("oracle_of_delphi")
    with pytest.raises(ValueError):
        ExternalOracle("ftp://x")


def test_proposal_from_json_rejects_non_objects():
    with pytest.raises(OracleFailure):
        proposal_from_json([1, 2])
