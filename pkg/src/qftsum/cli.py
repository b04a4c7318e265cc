"""Command-line front end.

    qftsum run --d 13 --n 4 --len 8 --seed 7 --keys random
    qftsum private-mode --d 5 --n 3 --len 4 --keys keys.txt
    qftsum attack --strategy intercept-resend --d 2 --decoys 16 --trials 10000 --seed 1
    qftsum oracle-check --dmax 4 --nmax 4

Results are line-delimited JSON records (one per trial plus a summary),
written to ``--out`` or stdout. Records carry no wall-clock data so equal
arguments give byte-identical files; elapsed time goes to stderr.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np

from .adversary import (
    AttackStrategy,
    BasisPolicy,
    Collusion,
    EntangleProbe,
    InterceptResend,
    MeasureResend,
    SemiHonestP1,
    binomial_abort_probability,
    campaign_trials,
    checked_decoys,
    collusion_posterior,
    semi_honest_p1_attack,
    trial_streams,
)
from .errors import DomainError, QftSumError
from .harness import float_field, records_to_text
from .oracle import decoy_detection_probability, exact_distribution, statevector_distribution
from .protocol import PrivateKeyString, ProtocolConfig, as_keys, mod_sum, random_keys, run_private_mode, run_protocol

COMMANDS = ("run", "private-mode", "attack", "oracle-check")

DEFAULTS = {
    "d": 2,
    "n": 3,
    "len": 1,
    "decoys": None,
    "threshold": 0.0,
    "seed": 0,
    "keys": "random",
    "strategy": "none",
    "policy": "random",
    "targets": "2",
    "trials": 1,
    "out": None,
    "transcript": None,
    "dmax": 4,
    "nmax": 4,
    "samples": 50,
}


class UsageError(QftSumError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qftsum", description="Secure multi-party quantum summation simulator")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON scenario file; flags override its values")
    p.add_argument("--d", type=int, help="qudit dimension (modulus)")
    p.add_argument("--n", type=int, help="number of parties")
    p.add_argument("--len", type=int, help="key-string length N")
    p.add_argument("--decoys", type=int, help="decoys per transmitted sequence (default: N)")
    p.add_argument("--threshold", type=float, help="abort when a decoy error rate exceeds this")
    p.add_argument("--seed", type=int)
    p.add_argument("--keys", help="'random' or a file with one line of N digits per party")
    p.add_argument(
        "--strategy",
        help="none|intercept-resend|measure-resend|entangle-probe|semi-honest-p1|collude:<ids>",
    )
    p.add_argument("--policy", choices=[b.value for b in BasisPolicy], help="intercept-resend basis choice")
    p.add_argument("--targets", help="recipients whose channel is attacked, comma separated, or 'all'")
    p.add_argument("--trials", type=int)
    p.add_argument("--out", type=Path, help="result records (default: stdout)")
    p.add_argument("--transcript", type=Path, help="write the event transcript of the first trial here")
    p.add_argument("--dmax", type=int, help="oracle-check: largest d")
    p.add_argument("--nmax", type=int, help="oracle-check: largest n")
    p.add_argument("--samples", type=int, help="oracle-check: random key columns per (d, n) when not exhaustive")
    return p


def resolve(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update(loaded)
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


def make_config(opts: dict) -> ProtocolConfig:
    for name in ("d", "n", "len", "trials"):
        if not isinstance(opts[name], int):
            raise DomainError(f"--{name} must be an integer")
    if opts["d"] < 2:
        raise DomainError(f"--d must be >= 2, got {opts['d']}")
    if opts["n"] < 3:
        raise DomainError(f"--n must be >= 3, got {opts['n']}")
    if opts["trials"] < 1:
        raise DomainError(f"--trials must be >= 1, got {opts['trials']}")
    return ProtocolConfig(
        d=opts["d"],
        n=opts["n"],
        length=opts["len"],
        decoys=opts["decoys"],
        threshold=float(opts["threshold"]),
        seed=opts["seed"],
    )


def load_keys(source, cfg: ProtocolConfig) -> list[PrivateKeyString] | None:
    """``None`` for random keys, otherwise validated explicit keys."""
    if source == "random":
        return None
    if isinstance(source, list):
        rows = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read key file {source}: {exc}") from None
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append([int(x) for x in line.split()])
            except ValueError:
                raise DomainError(f"key file line {lineno}: digits must be integers") from None
    if len(rows) != cfg.n:
        raise DomainError(f"keys: expected {cfg.n} lines (one per party), got {len(rows)}")
    return as_keys(cfg, rows)


def parse_strategy(opts: dict, cfg: ProtocolConfig) -> AttackStrategy | None:
    name = opts["strategy"]
    targets_opt = str(opts["targets"])
    if targets_opt == "all":
        targets = None
    else:
        try:
            targets = tuple(int(x) for x in targets_opt.split(","))
        except ValueError:
            raise DomainError(f"--targets must be 'all' or comma-separated party ids, got {targets_opt!r}") from None
        if any(t not in cfg.parties or t == 1 for t in targets):
            raise DomainError(f"--targets must name recipients in 2..{cfg.n}")
    if name == "none":
        return None
    if name == "intercept-resend":
        return InterceptResend(targets=targets, policy=BasisPolicy(opts["policy"]))
    if name == "measure-resend":
        return MeasureResend(targets=targets)
    if name == "entangle-probe":
        return EntangleProbe(targets=targets)
    if name == "semi-honest-p1":
        return SemiHonestP1()
    if name.startswith("collude:"):
        ids = name.split(":", 1)[1]
        try:
            members = frozenset(int(x) for x in ids.split(",") if x)
        except ValueError:
            raise DomainError(f"--strategy collude:<ids> needs comma-separated party ids, got {ids!r}") from None
        c = Collusion(members)
        c.validate(cfg)
        return c
    raise DomainError(f"unknown --strategy {name!r}")


def cfg_record(cfg: ProtocolConfig) -> dict:
    return {
        "d": cfg.d,
        "n": cfg.n,
        "len": cfg.length,
        "decoys": cfg.decoys,
        "threshold": cfg.threshold,
        "seed": cfg.seed,
    }


def _write_transcript(path: Path | None, text: str) -> None:
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_run(opts, cfg, explicit) -> tuple[list[dict], bool]:
    records = []
    wrong = 0
    completed = 0
    for i, rng in enumerate(trial_streams(cfg.seed, opts["trials"])):
        keys = explicit if explicit is not None else random_keys(cfg, rng)
        out = run_protocol(cfg, keys, rng=rng)
        expected = mod_sum([k.digits for k in keys], cfg.d)
        ok = (not out.completed) or out.sum == expected
        wrong += not ok
        completed += out.completed
        records.append(
            {
                "record": "trial",
                "trial": i,
                "status": out.status.value,
                "sum": list(out.sum) if out.sum is not None else None,
                "error_rates": {str(j): float_field(r.error_rate) for j, r in out.check_reports.items()},
                "correct": ok,
            }
        )
        if i == 0:
            _write_transcript(opts["transcript"], out.transcript.dumps())
    records.append(
        {
            "record": "summary",
            "command": "run",
            "cfg": cfg_record(cfg),
            "keys": "random" if explicit is None else [list(k.digits) for k in explicit],
            "trials": opts["trials"],
            "completed": completed,
            "incorrect": wrong,
        }
    )
    return records, wrong == 0


def cmd_private(opts, cfg, explicit) -> tuple[list[dict], bool]:
    records = []
    agreed_all = True
    transcript_parts = []
    for i, rng in enumerate(trial_streams(cfg.seed, opts["trials"])):
        keys = explicit if explicit is not None else random_keys(cfg, rng)
        outcomes = run_private_mode(cfg, keys, rng)
        expected = mod_sum([k.digits for k in keys], cfg.d)
        sums = {str(p): (list(o.sum) if o.sum is not None else None) for p, o in outcomes.items()}
        done = [o.sum for o in outcomes.values() if o.completed]
        agreed = all(s == expected for s in done)
        agreed_all &= agreed
        records.append(
            {
                "record": "trial",
                "trial": i,
                "status": {str(p): o.status.value for p, o in outcomes.items()},
                "sums": sums,
                "correct": agreed,
            }
        )
        if i == 0:
            for p, o in outcomes.items():
                transcript_parts.append(json.dumps({"event": "run", "preparer": p}, sort_keys=True, separators=(",", ":")) + "\n")
                transcript_parts.append(o.transcript.dumps())
    _write_transcript(opts["transcript"], "".join(transcript_parts))
    records.append(
        {
            "record": "summary",
            "command": "private-mode",
            "cfg": cfg_record(cfg),
            "trials": opts["trials"],
            "correct": agreed_all,
        }
    )
    return records, agreed_all


def cmd_attack(opts, cfg, strategy) -> tuple[list[dict], bool]:
    if strategy is None:
        raise UsageError("attack needs --strategy other than 'none'")
    records = []
    trials = opts["trials"]
    name = opts["strategy"]
    aborted = tested = mismatches = 0
    max_dev = 0.0
    recovered = 0

    if isinstance(strategy, SemiHonestP1):
        for i, rng in enumerate(trial_streams(cfg.seed, trials)):
            rep = semi_honest_p1_attack(cfg, rng)
            out = rep.outcome
            dev = max((t.deviation_from_uniform() for ts in rep.posteriors.values() for t in ts), default=0.0)
            max_dev = max(max_dev, dev)
            t, m = checked_decoys(out, strategy)
            tested, mismatches, aborted = tested + t, mismatches + m, aborted + (not out.completed)
            records.append(_trial_record(i, out, t, m, posterior_deviation=float_field(dev)))
            if i == 0:
                _write_transcript(opts["transcript"], out.transcript.dumps())
    elif isinstance(strategy, Collusion):
        for i, rng in enumerate(trial_streams(cfg.seed, trials)):
            keys = random_keys(cfg, rng)
            out = run_protocol(cfg, keys, rng=rng)
            t, m = checked_decoys(out, strategy)
            tested, mismatches, aborted = tested + t, mismatches + m, aborted + (not out.completed)
            extra = {}
            if out.completed:
                post = collusion_posterior(strategy.colluders, out.transcript, cfg, keys)
                dev = max(tb.deviation_from_uniform() for ts in post.values() for tb in ts)
                max_dev = max(max_dev, dev)
                got = tuple(tb.mode() for tb in post[1]) if all(tb.entropy() == 0 for tb in post[1]) else None
                hit = got == keys[0].digits
                recovered += hit
                extra = {"posterior_deviation": float_field(dev), "p1_recovered": hit}
            records.append(_trial_record(i, out, t, m, **extra))
            if i == 0:
                _write_transcript(opts["transcript"], out.transcript.dumps())
    else:
        for i, _keys, attack, out in campaign_trials(strategy, cfg, trials):
            t, m = checked_decoys(out, attack)
            tested, mismatches, aborted = tested + t, mismatches + m, aborted + (not out.completed)
            records.append(_trial_record(i, out, t, m))
            if i == 0:
                _write_transcript(opts["transcript"], out.transcript.dumps())

    summary = {
        "record": "summary",
        "command": "attack",
        "strategy": name,
        "cfg": cfg_record(cfg),
        "trials": trials,
        "aborted": aborted,
        "abort_rate": float_field(aborted / trials),
        "decoys_tested": tested,
        "mismatches": mismatches,
        "per_decoy_error_rate": float_field(mismatches / tested if tested else 0.0),
        "max_posterior_deviation": float_field(max_dev),
    }
    if name in ("intercept-resend", "measure-resend", "entangle-probe"):
        p = decoy_detection_probability(cfg.d, strategy)
        n_attacked = len(strategy.targets) if strategy.targets is not None else cfg.n - 1
        survive = (1 - binomial_abort_probability(cfg.decoys, p, cfg.threshold)) ** n_attacked
        summary["oracle_per_decoy"] = float_field(p)
        summary["oracle_abort_probability"] = float_field(1 - survive)
    if isinstance(strategy, Collusion):
        summary["colluders"] = sorted(strategy.colluders)
        summary["p1_recovered"] = recovered
    records.append(summary)
    return records, True


def _trial_record(i, out, tested, mismatches, **extra) -> dict:
    rec = {
        "record": "trial",
        "trial": i,
        "status": out.status.value,
        "decoys_tested": tested,
        "mismatches": mismatches,
    }
    rec.update(extra)
    return rec


def cmd_oracle_check(opts) -> tuple[list[dict], bool]:
    dmax, nmax, samples = opts["dmax"], opts["nmax"], opts["samples"]
    if dmax < 2 or nmax < 2:
        raise DomainError("--dmax and --nmax must be >= 2")
    rng = np.random.default_rng(opts["seed"])
    records = []
    all_ok = True
    for d in range(2, dmax + 1):
        for n in range(2, nmax + 1):
            if d**n <= 256:
                columns = list(itertools.product(range(d), repeat=n))
            else:
                columns = [tuple(int(x) for x in rng.integers(0, d, size=n)) for _ in range(samples)]
            worst = 0.0
            worst_marginal = 0.0
            for keys in columns:
                exact = exact_distribution(d, n, keys)
                sv = statevector_distribution(d, n, keys)
                worst = max(worst, exact.max_abs_diff(sv))
                for i in range(1, n + 1):
                    worst_marginal = max(worst_marginal, float(np.max(np.abs(exact.marginal(i) - 1.0 / d))))
            ok = worst <= 1e-10 and worst_marginal <= 1e-12
            all_ok &= ok
            records.append(
                {
                    "record": "oracle",
                    "d": d,
                    "n": n,
                    "columns": len(columns),
                    "max_abs_diff": float_field(worst),
                    "max_marginal_deviation": float_field(worst_marginal),
                    "agree": ok,
                }
            )
    for d in range(2, dmax + 1):
        for name in ("intercept-resend", "measure-resend", "entangle-probe"):
            p = decoy_detection_probability(d, name)
            ok = abs(p - (d - 1) / (2 * d)) <= 1e-12
            all_ok &= ok
            records.append({"record": "detection", "d": d, "strategy": name, "probability": float_field(p), "agree": ok})
    records.append({"record": "summary", "command": "oracle-check", "dmax": dmax, "nmax": nmax, "agree": all_ok})
    return records, all_ok


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        opts = resolve(args)
        if args.command == "oracle-check":
            records, ok = cmd_oracle_check(opts)
        else:
            cfg = make_config(opts)
            explicit = load_keys(opts["keys"], cfg)
            strategy = parse_strategy(opts, cfg)
            if args.command == "run":
                if strategy is not None:
                    raise UsageError("run takes no --strategy; use the attack command")
                records, ok = cmd_run(opts, cfg, explicit)
            elif args.command == "private-mode":
                records, ok = cmd_private(opts, cfg, explicit)
            else:
                records, ok = cmd_attack(opts, cfg, strategy)
    except QftSumError as exc:
        print(f"qftsum: error: {exc}", file=sys.stderr)
        return 2

    text = records_to_text(records)
    if opts["out"] is not None:
        with open(opts["out"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        summary = records[-1]
        print(json.dumps(summary, sort_keys=True), file=sys.stdout)
    else:
        sys.stdout.write(text)
    print(f"qftsum: {args.command} finished in {time.perf_counter() - started:.3f}s", file=sys.stderr)
    if not ok:
        print("qftsum: check FAILED", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
