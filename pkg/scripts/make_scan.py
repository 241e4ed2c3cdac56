"""Write SCAN split files by enumerating the SCAN grammar.

The public release is the full enumeration of this grammar (20,910 commands),
so the Add Jump, Around Right and Length files come out identical in content
to the release; Simple is a seeded random 80/20 split.

    python scripts/make_scan.py data/
"""

import argparse
import itertools
import random
from pathlib import Path

VERBS = {"walk": "WALK", "look": "LOOK", "run": "RUN", "jump": "JUMP"}
TURNS = {"left": "LTURN", "right": "RTURN"}


def commands():
    phrases = []
    for d, turn in TURNS.items():
        for u in list(VERBS) + ["turn"]:
            act = [] if u == "turn" else [VERBS[u]]
            phrases.append((f"{u} {d}", [turn] + act))
            phrases.append((f"{u} opposite {d}", [turn, turn] + act))
            phrases.append((f"{u} around {d}", ([turn] + act) * 4))
    phrases += [(u, [a]) for u, a in VERBS.items()]
    simple = []
    for c, a in phrases:
        simple += [(c, a), (f"{c} twice", a * 2), (f"{c} thrice", a * 3)]
    out = list(simple)
    for (c1, a1), (c2, a2) in itertools.product(simple, simple):
        out.append((f"{c1} and {c2}", a1 + a2))
        out.append((f"{c1} after {c2}", a2 + a1))
    return out


def splits(seed=0):
    cmds = commands()
    rng = random.Random(seed)
    shuffled = cmds[:]
    rng.shuffle(shuffled)
    n_test = round(0.2 * len(cmds))
    yield "simple", shuffled[n_test:], shuffled[:n_test]

    has_jump = [p for p in cmds if "jump" in p[0].split()]
    no_jump = [p for p in cmds if "jump" not in p[0].split()]
    # the release repeats the bare primitive to reach 14,670 training lines
    train = no_jump + [("jump", ["JUMP"])] * 1467
    rng.shuffle(train)
    yield "addprim_jump", train, [p for p in has_jump if p[0] != "jump"]

    train = [p for p in cmds if "around right" not in p[0]]
    test = [p for p in cmds if "around right" in p[0] and "turn around right" not in p[0]]
    yield "template_around_right", train, test

    yield "length", [p for p in cmds if len(p[1]) <= 22], [p for p in cmds if len(p[1]) >= 24]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, train, test in splits(args.seed):
        for part, pairs in (("train", train), ("test", test)):
            path = args.out / f"tasks_{part}_{name}.txt"
            path.write_text("".join(f"IN: {c} OUT: {' '.join(a)}\n" for c, a in pairs), encoding="utf-8")
            print(f"{path}: {len(pairs)}")


if __name__ == "__main__":
    main()
