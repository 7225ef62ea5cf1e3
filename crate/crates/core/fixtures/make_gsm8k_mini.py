"""Regenerates gsm8k_mini.jsonl: ten small fully expanded routing trees
shaped like GSM8K traces (1.5B draft model, 7B target with API pricing).

Run from this directory: python3 make_gsm8k_mini.py > gsm8k_mini.jsonl
"""

import json
import random

SMALL = {"index": 0, "param_count": 1_500_000_000}
LARGE = {
    "index": 1,
    "param_count": 7_000_000_000,
    "pricing": {"cached_input_per_mtok": 10.0, "input_per_mtok": 40.0, "output_per_mtok": 160.0},
}
PROMPT_TOKENS = 120


def step(rng, model, depth, prefix_tokens, final, sound):
    length = rng.randint(20, 90)
    base = 0.82 if sound else 0.45
    u = round(min(0.99, max(0.05, rng.gauss(base, 0.12))), 4)
    cached = prefix_tokens // 2 if model == 1 else 0
    return {
        "cached_tokens_billed": cached,
        "input_tokens_billed": PROMPT_TOKENS + prefix_tokens - cached if model == 1 else 0,
        "is_final_answer": final,
        "output_tokens_billed": length,
        "text_len_tokens": length,
        "uncertainty": u,
        "verifier_bit": 1 if (sound if rng.random() < 0.9 else not sound) else 0,
    }


def node(rng, depth, model, horizon, prefix, ok, sound_small, large_ok, drop_escalate):
    """Node after step y_{depth-1}, generated by `model`."""
    if depth == horizon + 1:
        return {"children": {}, "depth": depth, "terminal": {"large_model_correct": large_ok, "routed_correct": int(ok)}}
    children = {}
    actions = ["continue"] + (["escalate:1"] if model == 0 else [])
    if drop_escalate and depth == 1:
        actions = ["continue"]
    for a in actions:
        nxt = 1 if a == "escalate:1" else model
        t = depth
        sound = sound_small[t] if nxt == 0 else True
        s = step(rng, nxt, depth + 1, prefix, t == horizon, sound)
        children[a] = {
            "node": node(rng, depth + 1, nxt, horizon, prefix + s["text_len_tokens"], ok and sound, sound_small, large_ok, drop_escalate),
            "step": s,
        }
    return {"children": children, "depth": depth}


def tree(rng, i):
    horizon = 1 + i % 3
    difficulty = round(rng.random(), 2)
    sound_small = [rng.random() > 0.15 + 0.4 * difficulty for _ in range(horizon + 1)]
    large_ok = 1 if rng.random() < 0.95 else 0
    y0 = step(rng, 0, 1, 0, horizon == 0, sound_small[0])
    root = {
        "children": {
            "continue": {
                "node": node(rng, 1, 0, horizon, y0["text_len_tokens"], sound_small[0], sound_small, large_ok, i == 9),
                "step": y0,
            }
        },
        "depth": 0,
    }
    return {
        "difficulty": difficulty,
        "model_pool": [SMALL, LARGE],
        "problem_id": f"gsm8k-mini-{i:03d}",
        "root": root,
        "schema_version": 1,
        "verifier_labeled": True,
    }


def main():
    rng = random.Random(20240611)
    for i in range(10):
        print(json.dumps(tree(rng, i), sort_keys=True, separators=(",", ":")))


if __name__ == "__main__":
    main()
