"""Repair oracles: who proposes a fix when diagnosis asks for one.

``ground_truth`` knows the injected fault and returns its inverse edit (for a
localized fix) or the reference formulation; ``noop`` hands the input back;
``external`` forwards the request to a subprocess (``exec:<command>``) or an
HTTP endpoint (``http://...``) as JSON and expects JSON back.

Wire format. Request::

    {"scenario": {"name", "nl_text"}, "data": {field: [values]},
     "formulation": <IR>, "evidence": <report or null>,
     "local_validation": [messages], "requested_action": "CodeFix" | "Reformulate",
     "attempt": k}

Response: ``{"action": "CodeFix", "patch": [edits]}`` or
``{"action": "Reformulate", "formulation": <IR>}``.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass

from .formulation import Edit, FormulationIR, IRFormatError, PatchRejected, patch_from_json, patch_to_json

TIMEOUT_ENV = "OPTILOOP_ORACLE_TIMEOUT_SECS"
DEFAULT_TIMEOUT = 120.0

CODEFIX = "CodeFix"
REFORMULATE = "Reformulate"


class OracleFailure(RuntimeError):
    """The oracle produced nothing usable; the attempt is consumed."""


@dataclass(frozen=True)
class RepairRequest:
    scenario: object
    formulation: FormulationIR
    action: str
    attempt: int
    report: object = None
    local_errors: tuple[str, ...] = ()

    def to_json(self) -> dict:
        s = self.scenario
        return {
            "scenario": {"name": s.name, "nl_text": s.nl_text},
            "data": s.data(),
            "formulation": self.formulation.to_dict(),
            "evidence": None if self.report is None else self.report.to_json(),
            "local_validation": list(self.local_errors),
            "requested_action": self.action,
            "attempt": self.attempt,
        }


@dataclass(frozen=True)
class RepairProposal:
    action: str
    patch: tuple[Edit, ...] | None = None
    formulation: FormulationIR | None = None

    def to_json(self) -> dict:
        d = {"action": self.action}
        if self.patch is not None:
            d["patch"] = patch_to_json(self.patch)
        if self.formulation is not None:
            d["formulation"] = self.formulation.to_dict()
        return d


def proposal_from_json(d) -> RepairProposal:
    if not isinstance(d, dict):
        raise OracleFailure("oracle response is not a JSON object")
    action = d.get("action")
    try:
        if action == CODEFIX and "patch" in d:
            return RepairProposal(CODEFIX, patch=patch_from_json(d["patch"]))
        if action in (CODEFIX, REFORMULATE) and "formulation" in d:
            return RepairProposal(action, formulation=FormulationIR.from_dict(d["formulation"]))
    except (PatchRejected, IRFormatError, KeyError, TypeError, ValueError) as exc:
        raise OracleFailure(f"malformed oracle response: {exc}") from exc
    raise OracleFailure(f"oracle response needs an action with a patch or formulation, got keys {sorted(d)}")


class GroundTruthOracle:
    kind = "ground_truth"

    def __init__(self, reference: FormulationIR, repair: tuple[Edit, ...] | None = None, max_edits: int = 2):
        self.reference = reference
        self.repair_patch = tuple(repair) if repair is not None else None
        self.max_edits = max_edits

    def repair(self, request: RepairRequest) -> RepairProposal:
        if request.action == CODEFIX and self.repair_patch is not None and len(self.repair_patch) <= self.max_edits:
            return RepairProposal(CODEFIX, patch=self.repair_patch)
        return RepairProposal(REFORMULATE, formulation=self.reference)


class NoopOracle:
    kind = "noop"

    def repair(self, request: RepairRequest) -> RepairProposal:
        return RepairProposal(request.action, formulation=request.formulation)


def oracle_timeout() -> float:
    raw = os.environ.get(TIMEOUT_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_TIMEOUT
    try:
        v = float(raw)
    except ValueError as exc:
        raise ValueError(f"{TIMEOUT_ENV} must be a number of seconds, got {raw!r}") from exc
    if v <= 0:
        raise ValueError(f"{TIMEOUT_ENV} must be positive")
    return v


class ExternalOracle:
    """Forward requests to a command or an HTTP endpoint."""

    kind = "external"

    def __init__(self, target: str, timeout: float | None = None):
        if target.startswith("exec:"):
            self.transport, self.address = "exec", target[5:].strip()
        elif target.startswith(("http://", "https://")):
            self.transport, self.address = "http", target
        elif target.startswith("http:"):
            self.transport, self.address = "http", target[5:].strip()
        else:
            raise ValueError(f"external oracle must be 'exec:<command>' or an http(s) URL, got {target!r}")
        if not self.address:
            raise ValueError("external oracle target is empty")
        self.timeout = timeout

    def _call(self, payload: bytes, timeout: float) -> bytes:
        if self.transport == "exec":
            try:
                done = subprocess.run(shlex.split(self.address), input=payload, capture_output=True, timeout=timeout)
            except subprocess.TimeoutExpired as exc:
                raise OracleFailure(f"oracle command timed out after {timeout:g}s") from exc
            except OSError as exc:
                raise OracleFailure(f"cannot run oracle command: {exc}") from exc
            if done.returncode != 0:
                raise OracleFailure(f"oracle command exited {done.returncode}: {done.stderr.decode(errors='replace')[:200]}")
            return done.stdout
        req = urllib.request.Request(self.address, data=payload, headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.read()
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise OracleFailure(f"oracle endpoint failed: {exc}") from exc

    def repair(self, request: RepairRequest) -> RepairProposal:
        timeout = self.timeout if self.timeout is not None else oracle_timeout()
        raw = self._call(json.dumps(request.to_json()).encode(), timeout)
        try:
            d = json.loads(raw.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise OracleFailure(f"oracle returned invalid JSON: {exc}") from exc
        return proposal_from_json(d)


def make_oracle(kind: str, reference: FormulationIR | None = None, repair=None, target: str | None = None):
    if kind == "ground_truth":
        if reference is None:
            raise ValueError("ground_truth oracle needs the reference formulation")
        return GroundTruthOracle(reference, repair)
    if kind == "noop":
        return NoopOracle()
    if kind == "external":
        if not target:
            raise ValueError("external oracle needs a target (exec:<command> or URL)")
        return ExternalOracle(target)
    raise ValueError(f"unknown oracle kind {kind!r}")
