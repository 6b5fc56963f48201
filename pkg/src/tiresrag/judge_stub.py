"""Reference judge server backed by the world oracle.

Speaks the line-delimited JSON protocol of :mod:`tiresrag.judge` over
stdin/stdout (default) or a TCP port::

    python -m tiresrag.judge_stub --world world.json
    python -m tiresrag.judge_stub --world world.json --port 7001
"""

from __future__ import annotations

import argparse
import json
import socketserver
import sys

from .grammar import parse_trajectory
from .rewards import OracleJudge
from .world import CHAIN_LEN, WorldSpec


class StubJudge:
    def __init__(self, world: WorldSpec):
        self.oracle = OracleJudge(world)
        self.by_text = {q.text: q for h in range(1, CHAIN_LEN + 1) for q in world.all_questions(h)}

    def answer(self, line: str) -> dict:
        req = json.loads(line)
        rid = req.get("request_id")
        q = self.by_text.get(req.get("question"))
        parsed = parse_trajectory(req.get("trajectory", ""), require_answer=False)
        if q is None or isinstance(parsed, list):
            return {"request_id": rid, "error": "unknown question or unparsable trajectory"}
        if req.get("kind") == "sufficient":
            score = self.oracle.sufficient(q, parsed, req.get("gold", ""))
        elif req.get("kind") == "thinking":
            score = self.oracle.thinking(q, parsed)
        else:
            return {"request_id": rid, "error": f"unknown kind {req.get('kind')!r}"}
        return {"request_id": rid, "score": score}


def serve_stdio(judge: StubJudge, rfile=None, wfile=None) -> None:
    rfile = rfile or sys.stdin
    wfile = wfile or sys.stdout
    for line in rfile:
        if line.strip():
            wfile.write(json.dumps(judge.answer(line)) + "\n")
            wfile.flush()


def serve_tcp(judge: StubJudge, host: str, port: int) -> None:
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                if raw.strip():
                    self.wfile.write((json.dumps(judge.answer(raw.decode("utf-8"))) + "\n").encode("utf-8"))
                    self.wfile.flush()

    with socketserver.ThreadingTCPServer((host, port), Handler) as srv:
        print(f"listening on {srv.server_address[0]}:{srv.server_address[1]}", file=sys.stderr, flush=True)
        srv.serve_forever()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="oracle-backed judge server")
    ap.add_argument("--world", required=True, help="world JSON file")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, help="serve TCP on this port instead of stdin/stdout")
    args = ap.parse_args(argv)
    with open(args.world, encoding="utf-8") as fh:
        judge = StubJudge(WorldSpec.from_json(fh.read()))
    if args.port is None:
        serve_stdio(judge)
    else:
        serve_tcp(judge, args.host, args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
