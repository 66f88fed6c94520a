"""Newline-delimited JSON ask/tell protocol for external evaluators.

The evaluator drives the session. Every request and reply is a single JSON
object on its own line and carries the campaign id and seed::

    -> {"op": "ask", "n": 5}
    <- {"campaign": "c1", "seed": 0, "points": [[...], ...]}
    -> {"op": "tell", "results": [{"x": [...], "y": 1.5}, ...]}
    <- {"campaign": "c1", "seed": 0, "accepted": 5, "remaining": 95}

An empty ``points`` list means the campaign has finished. Violations produce
``{"campaign": ..., "seed": ..., "error": "protocol", "message": ...}``.
"""

from __future__ import annotations

import json
from typing import IO, Iterable

import numpy as np

from .search import Campaign


class ProtocolError(Exception):
    pass


class AskTellSession:
    """Strictly alternating ask/tell over one campaign."""

    def __init__(self, campaign: Campaign, campaign_id: str):
        self.campaign = campaign
        self.campaign_id = campaign_id
        self.seed = campaign.settings.seed

    def _envelope(self, **body) -> dict:
        return {"campaign": self.campaign_id, "seed": self.seed, **body}

    def ask(self, n: int | None = None) -> dict:
        if self.campaign.awaiting_tell:
            raise ProtocolError("ask while a previous batch awaits tell")
        if n is not None and (not isinstance(n, int) or n < 1):
            raise ProtocolError("n must be a positive integer")
        pts = self.campaign.ask(n)
        return self._envelope(points=pts.tolist())

    def tell(self, results: Iterable[dict]) -> dict:
        if not self.campaign.awaiting_tell:
            raise ProtocolError("tell without a pending ask")
        asked = self.campaign.outstanding
        try:
            xs = np.array([r["x"] for r in results], dtype=float)
            ys = np.array([r["y"] for r in results], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed results: {exc}") from None
        if ys.size != asked.shape[0]:
            raise ProtocolError(f"expected {asked.shape[0]} results, got {ys.size}")
        if xs.shape != asked.shape:
            raise ProtocolError("result points have the wrong dimension")
        # results may come back in any order; match them to the asked points
        order = np.empty(asked.shape[0], dtype=int)
        used = np.zeros(asked.shape[0], dtype=bool)
        for i, x in enumerate(xs):
            hit = np.flatnonzero(np.all(asked == x, axis=1) & ~used)
            if hit.size == 0:
                raise ProtocolError(f"unknown point {x.tolist()}")
            used[hit[0]] = True
            order[hit[0]] = i
        self.campaign.tell(ys[order])
        return self._envelope(accepted=int(ys.size), remaining=self.campaign.budget.remaining)

    def handle(self, msg: dict) -> dict:
        op = msg.get("op")
        if op == "ask":
            return self.ask(msg.get("n"))
        if op == "tell":
            return self.tell(msg.get("results", []))
        raise ProtocolError(f"unknown op {op!r}")

    def error(self, exc: Exception) -> dict:
        return self._envelope(error="protocol", message=str(exc))


def serve(session: AskTellSession, inp: IO[str], out: IO[str]) -> int:
    """Answer requests line by line until EOF or campaign end; returns error count."""
    errors = 0
    for line in inp:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ProtocolError("message must be a JSON object")
            reply = session.handle(msg)
        except (ProtocolError, json.JSONDecodeError) as exc:
            errors += 1
            reply = session.error(exc)
        out.write(json.dumps(reply) + "\n")
        out.flush()
        if reply.get("points") == [] and session.campaign.done:
            break
    return errors
