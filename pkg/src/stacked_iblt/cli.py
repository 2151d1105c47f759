"""Experiment harness: desk-scale runs that check the sketch's guarantees.

Every subcommand is deterministic given (seed, params): trials derive
their own seeds from (seed, trial index), workers only partition the
trial range, and aggregation preserves trial order, so the CSV output is
byte-identical across runs and thread counts. IBLT_THREADS caps workers.

Exit status is nonzero iff a measured value exceeds its bound beyond the
declared slack (mean + 3*sqrt(mean) + 1 for counting experiments, exact
for the others), which makes the harness usable as a CI gate.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .hashing import KWiseHash, SeededStream, bad_base_count, is_identity_multiset
from .reconcile import reconcile_local, serialize, sketch_of
from .stacked import DEFAULT_BIG_C, DEFAULT_C0, Params, StackedSketch, plan_layout

_TRIAL_STREAM = 0x10 << 56      # per-trial hash draws
_SEED_STREAM = 0x11 << 56       # per-trial derived master seeds


def _parse_delta(text: str) -> float:
    """Accept plain floats plus the convenient '2^-K' / '2**-K' forms."""
    text = text.strip()
    for sep in ("^", "**"):
        if sep in text:
            base, exp = text.split(sep, 1)
            return float(base) ** float(exp)
    return float(text)


def _worker_count() -> int:
    workers = os.cpu_count() or 1
    cap = os.environ.get("IBLT_THREADS")
    if cap:
        workers = min(workers, max(int(cap), 1))
    return max(workers, 1)


def _run_trials(fn, trials: int) -> list:
    workers = _worker_count()
    if workers == 1 or trials < 2:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, trials // (workers * 8))
        return list(pool.map(fn, range(trials), chunksize=chunk))


def _emit(out_path: str | None, lines: list[str]) -> None:
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _say(out_path: str | None, message: str) -> None:
    # Keep stdout clean for CSV when no --out file was given.
    stream = sys.stdout if out_path else sys.stderr
    stream.write(message + "\n")


def _params_line(command: str, **kv) -> str:
    parts = [f"command={command}"]
    parts += [f"{k}={v!r}" for k, v in kv.items()]
    return "# params: " + " ".join(parts)


def _count_slack(mean: float) -> int:
    """Declared statistical slack for counting experiments."""
    return math.ceil(mean + 3.0 * math.sqrt(mean) + 1.0)


def _trial_rng(seed: int, trial: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial, salt])


def _distinct_keys(rng: np.random.Generator, size: int, bound: int) -> np.ndarray:
    keys = rng.integers(0, bound, size=size, dtype=np.uint64)
    while np.unique(keys).size < size:        # collisions are ~2^-40 events
        keys = np.unique(keys)
        extra = rng.integers(0, bound, size=size - keys.size, dtype=np.uint64)
        keys = np.concatenate([keys, extra])
    return keys


# -- unique-hash -------------------------------------------------------------

def _non_unique_count(buckets: np.ndarray) -> int:
    """How many keys share their bucket with at least one other key."""
    order = np.sort(buckets)
    eq = order[1:] == order[:-1]
    shared = np.zeros(order.size, dtype=bool)
    shared[1:] |= eq
    shared[:-1] |= eq
    return int(shared.sum())


def cmd_unique_hash(args) -> int:
    n, big_c, k, trials, seed = args.n, args.big_c, args.k, args.trials, args.seed
    gamma = math.ceil(big_c * n)
    keys = np.arange(n, dtype=np.uint64)

    def one(trial: int) -> tuple[int, int]:
        # Fresh 2k-wise family member per trial: degree 2k-1 polynomial.
        h = KWiseHash(seed, 2 * k, gamma, stream_id=_TRIAL_STREAM | trial)
        bad = _non_unique_count(h.eval_batch(keys))
        return bad, int(bad > n / 2)

    results = _run_trials(one, trials)
    failures = sum(f for _, f in results)
    bound = 4.0 * (4.0 * math.e / big_c) ** min(k, n / big_c) if big_c > 4 * math.e else None
    lines = [_params_line("unique-hash", n=n, big_c=big_c, k=k, trials=trials, seed=seed),
             "trial,non_unique_count,failed"]
    lines += [f"{t},{bad},{f}" for t, (bad, f) in enumerate(results)]
    _emit(args.out, lines)
    if bound is None:
        _say(args.out, f"failures={failures}/{trials} bound=n/a (C <= 4e makes it vacuous)")
        return 0
    allowed = _count_slack(trials * bound)
    _say(args.out, f"failures={failures}/{trials} failure_fraction={failures / trials!r} "
                   f"bound_per_trial={bound!r} allowed={allowed}")
    return 0 if failures <= allowed else 1


# -- decode-failure ----------------------------------------------------------

def _build_params(args, master_seed: int) -> Params:
    return Params(n=args.n, delta=args.delta, big_c=args.big_c, c0=args.c0,
                  k=args.k, mode=args.mode, p=args.p, q=args.q,
                  master_seed=master_seed)


def cmd_decode_failure(args) -> int:
    load = args.load if args.load is not None else args.n
    _build_params(args, 0)   # validate once up front (and cache q if any)

    def one(trial: int) -> tuple[int, int]:
        master = SeededStream(args.seed, _SEED_STREAM | trial).below(1 << 64)
        sketch = StackedSketch(_build_params(args, master))
        rng = _trial_rng(args.seed, trial, salt=1)
        bound = sketch.checksum.key_bound if sketch.checksum else (1 << 61) - 1
        keys = _distinct_keys(rng, load, bound)
        values = rng.integers(0, 1 << 64, size=load, dtype=np.uint64)
        sketch.insert_arrays(keys, values)
        out = sketch.list_entries(in_place=True)
        recovered = len(out.recovered_plus)
        return recovered, int(out.complete and not out.inconsistent)

    results = _run_trials(one, args.trials)
    failures = sum(1 - ok for _, ok in results)
    lines = [_params_line("decode-failure", n=args.n, delta=args.delta, load=load,
                          trials=args.trials, seed=args.seed, big_c=args.big_c,
                          c0=args.c0, k=args.k, mode=args.mode),
             "trial,recovered,complete"]
    lines += [f"{t},{rec},{ok}" for t, (rec, ok) in enumerate(results)]
    _emit(args.out, lines)
    in_guarantee = load <= args.n
    allowed = _count_slack(args.trials * args.delta)
    note = f"delta={args.delta!r} allowed={allowed}" if in_guarantee else "bound=n/a (load > n)"
    _say(args.out, f"failures={failures}/{args.trials} "
                   f"failure_rate={failures / args.trials!r} {note}")
    return 0 if (not in_guarantee or failures <= allowed) else 1


# -- space -------------------------------------------------------------------

def cmd_space(args) -> int:
    params = Params(n=args.n, delta=args.delta, big_c=args.big_c, c0=args.c0,
                    k=args.k, master_seed=args.seed)
    lay = plan_layout(params)
    lines = [_params_line("space", n=args.n, delta=args.delta, big_c=args.big_c,
                          c0=args.c0, tau=lay.tau, capacity=lay.capacity),
             "table,kind,rows,cols,cells"]
    for i, (rows, cols) in enumerate(lay.tables):
        kind = "single" if i < lay.single_count else "group"
        lines.append(f"{i},{kind},{rows},{cols},{rows * cols}")
    _emit(args.out, lines)
    total = lay.total_cells
    bound = lay.cell_bound(params.big_c)
    classic = params.big_c * args.n * (1.0 + math.log2(1.0 / args.delta) / math.log2(max(args.n, 2)))
    # Cell cost model lg(|U| n / delta) with a 64-bit universe, next to the
    # in-memory widths (24 or 40 bytes).
    model_bits = 64 + math.log2(max(args.n, 2)) + math.log2(1.0 / args.delta)
    _say(args.out, f"total_cells={total} closed_form_bound={bound!r} "
                   f"classic_cells={classic!r} ratio={total / classic!r}")
    _say(args.out, f"in_memory_bits={total * 24 * 8} (plain) "
                   f"{total * 40 * 8} (checksum) model_bits_per_cell={model_bits!r}")
    return 0 if total <= bound else 1


# -- lemma3 ------------------------------------------------------------------

def _sign_patterns(ell: int):
    for bits in range(1 << ell):
        yield [1 if bits & (1 << i) else -1 for i in range(ell)]


def cmd_lemma3(args) -> int:
    p, q, ell_max = args.p, args.q, args.ell_max
    if ell_max < 1:
        raise SystemExit("--ell-max must be >= 1")
    work = sum((p * 2) ** ell for ell in range(1, ell_max + 1)) * q
    if work > 2 * 10**7 or ell_max * p > 10_000:
        raise SystemExit("lemma3 sweep too large; shrink p, q, or --ell-max")
    lines = [_params_line("lemma3", p=p, q=q, ell_max=ell_max),
             "ell,cases,identity_cases,worst_count,bound"]
    violated = False
    identity_note = []
    for ell in range(1, ell_max + 1):
        worst = -1
        cases = identity = 0
        for keys in _key_tuples(p, ell):
            for signs in _sign_patterns(ell):
                if is_identity_multiset(keys, signs):
                    identity += 1
                    count = bad_base_count(p, q, keys, signs)
                    identity_note.append((ell, keys, signs, count))
                    continue
                cases += 1
                count = bad_base_count(p, q, keys, signs)
                worst = max(worst, count)
        bound = 2 * ell * p + 1
        if worst > bound:
            violated = True
        lines.append(f"{ell},{cases},{identity},{worst},{bound}")
    _emit(args.out, lines)
    for ell, keys, signs, count in identity_note[:4]:
        _say(args.out, f"identity case (excluded): ell={ell} keys={keys} signs={signs} "
                       f"count={count} (= q-1 = {q - 1})")
    _say(args.out, f"worst counts within 2*ell*p+1 bound: {not violated}")
    return 1 if violated else 0


def _key_tuples(p: int, ell: int):
    tup = [0] * ell
    while True:
        yield list(tup)
        i = ell - 1
        while i >= 0 and tup[i] == p - 1:
            tup[i] = 0
            i -= 1
        if i < 0:
            return
        tup[i] += 1


# -- reconcile-demo ------------------------------------------------------------

def cmd_reconcile_demo(args) -> int:
    # Solve a_only + b_only = diff with a_only - b_only = size_a - size_b,
    # then clamp; reported sizes are the realizable ones.
    a_only = max(0, min(args.diff, (args.diff + args.size_a - args.size_b) // 2))
    b_only = args.diff - a_only
    shared = max(min(args.size_a - a_only, args.size_b - b_only), 0)
    size_a, size_b = shared + a_only, shared + b_only
    params = Params(n=args.n, delta=args.delta, big_c=args.big_c, c0=args.c0,
                    k=args.k, mode="checksum", p=args.p, q=args.q,
                    master_seed=args.seed)
    rng = _trial_rng(args.seed, 0, salt=2)
    keys = _distinct_keys(rng, shared + args.diff, params.p)
    values = rng.integers(0, 1 << 64, size=keys.size, dtype=np.uint64)
    pairs = list(zip(keys.tolist(), values.tolist()))
    set_a = set(pairs[:shared + a_only])
    set_b = set(pairs[:shared]) | set(pairs[shared + a_only:])
    env_a = serialize(sketch_of(set_a, params))
    env_b = serialize(sketch_of(set_b, params))
    a_missing, a_extra, ok_a = reconcile_local(set_a, env_b, params)
    b_missing, b_extra, ok_b = reconcile_local(set_b, env_a, params)
    exact = (ok_a and ok_b
             and a_missing == set_b - set_a and a_extra == set_a - set_b
             and b_missing == set_a - set_b and b_extra == set_b - set_a)
    lines = [_params_line("reconcile-demo", size_a=size_a, size_b=size_b,
                          diff=args.diff, n=args.n, delta=args.delta, seed=args.seed),
             "size_a,size_b,diff,n,bytes_on_wire,missing_a,missing_b,complete_a,complete_b,exact"]
    lines.append(f"{size_a},{size_b},{args.diff},{args.n},{len(env_a)},"
                 f"{len(a_missing)},{len(b_missing)},{int(ok_a)},{int(ok_b)},{int(exact)}")
    _emit(args.out, lines)
    _say(args.out, f"sets: |A|={size_a} |B|={size_b} |A xor B|={args.diff}")
    _say(args.out, f"wire: {len(env_a)} bytes per direction (layout-determined)")
    _say(args.out, f"A learned {len(a_missing)} pairs, B learned {len(b_missing)}; "
                   f"exact={exact}")
    if args.diff <= args.n and not exact:
        return 1
    return 0


# -- plumbing -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stacked-iblt",
        description="Experiment harness for stacked key-value sketches.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, *, n=1024, delta="2^-10", trials=1000):
        sp.add_argument("--n", type=int, default=n, help="capacity threshold")
        sp.add_argument("--delta", type=_parse_delta, default=_parse_delta(delta),
                        help="target failure probability (accepts 2^-K)")
        sp.add_argument("--trials", type=int, default=trials)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--big-c", type=float, default=DEFAULT_BIG_C, dest="big_c")
        sp.add_argument("--c0", type=float, default=DEFAULT_C0)
        sp.add_argument("--k", type=int, default=None)
        sp.add_argument("--mode", choices=("plain", "checksum"), default="plain")
        sp.add_argument("--p", type=int, default=None)
        sp.add_argument("--q", type=int, default=None)
        sp.add_argument("--out", type=str, default=None, help="CSV path (stdout if omitted)")

    sp = sub.add_parser("unique-hash", help="fraction of trials where more than "
                        "n/2 keys collide under a fresh 2k-wise hash")
    common(sp, n=512, trials=1000)
    sp.set_defaults(func=cmd_unique_hash, k=16)

    sp = sub.add_parser("decode-failure", help="full-load listing failure rate vs delta")
    common(sp, n=256, delta="2^-8")
    sp.add_argument("--load", type=int, default=None, help="pairs per trial (default n)")
    sp.set_defaults(func=cmd_decode_failure)

    sp = sub.add_parser("space", help="layout table and closed-form space accounting")
    common(sp)
    sp.set_defaults(func=cmd_space)

    sp = sub.add_parser("lemma3", help="exhaustive false-verification base counts")
    common(sp)
    sp.add_argument("--ell-max", type=int, default=2, dest="ell_max")
    sp.set_defaults(func=cmd_lemma3, p=5, q=101)

    sp = sub.add_parser("reconcile-demo", help="two-party reconciliation walkthrough")
    common(sp, n=64, delta="2^-6")
    sp.add_argument("--size-a", type=int, default=500, dest="size_a")
    sp.add_argument("--size-b", type=int, default=480, dest="size_b")
    sp.add_argument("--diff", type=int, default=16)
    sp.set_defaults(func=cmd_reconcile_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
