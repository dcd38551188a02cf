"""Reference external simulator: replies with ``x = theta``.

Fault injection flags make it useful as a protocol test fixture::

    python -m sbir.echo_sim --malformed 1 --sleep 2:5 --error 3 --nan-below-zero
"""

import argparse
import json
import math
import sys
import time


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sbir-echo")
    ap.add_argument("--malformed", type=int, action="append", default=[], help="row id to garble")
    ap.add_argument("--sleep", action="append", default=[], help="ID:SECONDS delay before replying")
    ap.add_argument("--error", type=int, action="append", default=[], help="row id to report as error")
    ap.add_argument("--nan-below-zero", action="store_true")
    args = ap.parse_args(argv)
    sleeps = {int(k): float(v) for k, v in (s.split(":") for s in args.sleep)}

    out = sys.stdout
    out.write(json.dumps({"protocol": 1}) + "\n")
    out.flush()
    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        rid, theta = req["id"], req["theta"]
        if rid in sleeps:
            time.sleep(sleeps[rid])
        if rid in args.malformed:
            out.write("{not json\n")
        elif rid in args.error:
            out.write(json.dumps({"id": rid, "error": "injected failure"}) + "\n")
        else:
            x = list(theta)
            if args.nan_below_zero and theta[0] < 0:
                x = [math.nan] * len(x)
            out.write(json.dumps({"id": rid, "x": x}) + "\n")
        out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
