"""Smoke test for the cleanctg Python extension.

Usage: python python/smoke_test.py [model.ckpt]
"""

import sys

import cleanctg as c


def main() -> None:
    x = c.synth_trace(minutes=20, seed=3)
    assert len(x) == 1200

    out = c.inject(x[:600], seed=5)
    assert out == c.inject(x[:600], seed=5), "injection must be deterministic"
    vals, miss = c.normalize(out["corrupted"])
    union = [False] * 600
    for runs in out["masks"][0]["runs"].values():
        for start, end in runs:
            union[start:end] = [True] * (end - start)
    lin = c.linear_interpolate(vals, [a or b for a, b in zip(miss, union)])
    print("linear-interpolated", len(lin), "samples")

    assert c.auroc([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0
    assert c.auroc([0.5, 0.5], [True, False]) == 0.5

    d = c.time_to_decision(c.synth_trace(minutes=60, seed=1))
    print("screen verdict", d["verdict"], "at minute", d["decision_minute"])

    try:
        c.auroc([0.1, 0.2], [True, True])
    except ValueError as e:
        print("error mapped:", e)
    else:
        raise AssertionError("expected ValueError")

    if len(sys.argv) > 1:
        m = c.Model.load(sys.argv[1])
        rows = m.detect(x)
        print("detected", len(rows), "minutes; first probs", rows[0]["probs"])
        if m.has_reconstructor:
            y = m.denoise(x)
            assert len(y) == len(x)
            print("denoised", len(y), "samples")

    print("smoke test OK")


if __name__ == "__main__":
    main()
