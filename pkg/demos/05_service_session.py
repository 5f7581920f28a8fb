"""Driving the HTTP service: an interactive exploration session.

Run: python demos/05_service_session.py --data data --bundle bundle

Starts the service in-process, creates a session for a test-split chair,
sets a text condition, scrubs the trajectory, accepts a candidate, and
shows the history growing. This is the same API the web frontend in
frontend/ speaks.
"""

import argparse
import json
import socket
import threading
import urllib.request

from shapexplore.config import RunConfig
from shapexplore.dataset import DataStore
from shapexplore.service import create_server


def call(base, method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method)
    if data:
        req.add_header("Content-Type", "application/json")
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="data")
    ap.add_argument("--bundle", default="bundle")
    args = ap.parse_args()

    config = RunConfig()
    config.paths.data_dir, config.paths.bundle_dir = args.data, args.bundle
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    try:
        server, service = create_server(config, port)
    except Exception as e:
        raise SystemExit(f"{e}\nTrain a bundle first (see demos/03 docstring).")
    threading.Thread(target=server.serve_forever, daemon=True).start()
    base = f"http://127.0.0.1:{port}"
    print("health:", json.dumps(call(base, "GET", "/health"))[:120], "...")

    store = DataStore(args.data)
    chair = next(
        r for r in store.split("test")
        if r.category == "chair" and not r.attributes["armrest"]
    )
    view = call(base, "POST", "/sessions", {"shape_id": chair.id})
    sid = view["session_id"]
    print(f"session {sid} on {chair.id} ({chair.caption!r}): refinement loss "
          f"{view['coopt']['initial_loss']:.4f} -> {view['coopt']['final_loss']:.4f}")

    cond = call(base, "POST", f"/sessions/{sid}/condition", {
        "mode": "text",
        "caption_from": "a plain chair",
        "caption_to": "a chair with armrests",
    })
    print(f"condition set: mode={cond['mode']} norm={cond['norm']:.3f}")

    traj = call(base, "GET", f"/sessions/{sid}/trajectory?alphas=0,0.5,1,1.5,2")
    for cand in traj["candidates"]:
        print(f"  alpha={cand['alpha']:>3.1f}  armrest={cand['oracle_scores']['armrest']:.3f}")

    after = call(base, "POST", f"/sessions/{sid}/accept", {"alpha": 1.0})
    print(f"accepted alpha=1.0; history={after['history']}")
    print("condition cleared after accept:", after["condition"] is None)
    server.shutdown()


if __name__ == "__main__":
    main()
