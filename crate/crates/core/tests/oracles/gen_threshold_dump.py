"""Build a baseline prediction dump whose sweep reproduces the published
x=80/85/90 rows (F1 and number predicted True).

Counts come from solving F1 = 2TP / (true_count + G) for TP at each row.
The published lower rows are not monotone in x and cannot come from any
single dump, so the remaining contexts get confidences below 80 spread
evenly and are not checked.

Usage: python3 gen_threshold_dump.py > fixtures/baseline_dump_conf.tsv
"""
import random
import sys

N = 11780
G = 4249  # gold positives
# (confidence, tp, fp): contexts whose max confidence is exactly this value
BANDS = [
    (90, 2029, 2833 - 2029),
    (85, 2588 - 2029, (4264 - 2588) - (2833 - 2029)),
    (80, 3341 - 2588, (7233 - 3341) - (4264 - 2588)),
]
LOW = [None, 20, 30, 40, 50, 60, 70, 75]


def rows():
    rng = random.Random(85)
    out = []
    for conf, tp, fp in BANDS:
        out += [(conf, 1)] * tp + [(conf, 0)] * fp
    pos_left = G - sum(b[1] for b in BANDS)
    neg_left = N - G - sum(b[2] for b in BANDS)
    out += [(LOW[i % len(LOW)], 1) for i in range(pos_left)]
    out += [(LOW[i % len(LOW)], 0) for i in range(neg_left)]
    rng.shuffle(out)
    return out


def sweep(rs, x):
    tp = sum(1 for c, g in rs if c is not None and c >= x and g)
    tc = sum(1 for c, _ in rs if c is not None and c >= x)
    return 2 * tp / (tc + G), tc


def main():
    rs = rows()
    assert len(rs) == N and sum(g for _, g in rs) == G
    for x, f1, tc in [(80, 0.582, 7233), (85, 0.608, 4264), (90, 0.573, 2833)]:
        got_f1, got_tc = sweep(rs, x)
        assert got_tc == tc and round(got_f1, 3) == f1, (x, got_f1, got_tc)
        print(f"x={x} f1={got_f1!r} true_count={got_tc}", file=sys.stderr)
    w = sys.stdout.write
    w("context_id\tmax_confidence\tgold\n")
    for i, (c, g) in enumerate(rs):
        w(f"ctx{i:05d}\t{'' if c is None else c}\t{g}\n")


main()
