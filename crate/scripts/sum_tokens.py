#!/usr/bin/env python3
"""Sum token counts over agent transcripts (JSONL), grouped by stage.

Usage: sum_tokens.py DIR [DIR ...]

Assistant turns count as completion tokens, every other turn as prompt
tokens. The stage is taken from the session file name prefix.
"""
import json
import sys
from pathlib import Path


def main(dirs):
    totals = {stage: {"prompt": 0, "completion": 0} for stage in ("poc", "review")}
    for d in dirs:
        for path in sorted(Path(d).glob("*.jsonl")):
            stage = path.stem.split("_", 1)[0]
            if stage not in totals:
                raise SystemExit(f"{path}: unknown stage prefix {stage!r}")
            lines = path.read_text().splitlines()
            for line in lines[1:]:
                turn = json.loads(line)
                key = "completion" if turn["role"] == "assistant" else "prompt"
                totals[stage][key] += turn["token_count"]
    totals["total"] = {
        k: totals["poc"][k] + totals["review"][k] for k in ("prompt", "completion")
    }
    json.dump(totals, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    if len(sys.argv) < 2:
        raise SystemExit(__doc__)
    main(sys.argv[1:])
