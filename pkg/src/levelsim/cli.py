"""Command-line entry point: ``levelsim {simulate,oracle,genealogy,verify}``.

Exit codes: 0 on success, 1 when a run or an acceptance check fails, 2 for
invalid configuration.  Files written by a failed command are removed.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import engine, oracle
from ._kernel import simulate_counts
from .config import KERNEL_SCENARIOS, RunConfig, parse_config
from .cox import estimate_cox, sample_cox
from .engine import fmt
from .errors import ConfigError, LevelSimError
from .levels import LevelParams
from .stats import TestReport
from .streams import DEFAULT_SEED, map_replicates
from .variants import environment_run

log = logging.getLogger("levelsim")

TRAJECTORY_HEADER = ("replicate", "time", "observable", "value")

Row = Tuple[int, float, str, float]


# ----------------------------------------------------------------------------
# Per-replicate workers
# ----------------------------------------------------------------------------


def _count_rows(rep: int, times, counts, norm: float) -> List[Row]:
    rows = []
    for t, c in zip(times, counts):
        rows.append((rep, t, "count", int(c)))
        rows.append((rep, t, "mass", c / norm))
    return rows


def _simulate_kernel(rng, rep: int, rc: RunConfig) -> List[Row]:
    cfg = rc.engine_config
    p = cfg.model.levels
    init = p.r * rng.random(rc.n0)
    imm = cfg.variants.immigration.rate(p.r) if cfg.variants.immigration else 0.0
    counts, _ = simulate_counts(p.a, p.b, p.r, init, rc.times, rng, immortal=cfg.variants.immortal, imm_rate=imm)
    return _count_rows(rep, rc.times, counts, p.r)


def _simulate_engine(rng, rep: int, rc: RunConfig, record: bool):
    cfg = rc.engine_config
    state = engine.init_uniform(rc.n0, cfg, rng, record=record)
    rows: List[Row] = []
    mt = cfg.variants.multitype
    r = cfg.model.levels.r
    for t in rc.times:
        engine.advance(state, t, cfg)
        count = engine.observe_count(state)
        rows.append((rep, t, "count", count))
        rows.append((rep, t, "mass", count / r))
        rows.append((rep, t, "min_level", engine.observe_min_level(state) + cfg.level_shift))
        if mt is not None:
            by_type = np.bincount([p.location for p in state.particles.values()], minlength=mt.m)
            rows.extend((rep, t, f"count_type{j}", int(c)) for j, c in enumerate(by_type))
    return rows, state


def _simulate_rep(rng, rep: int, rc: RunConfig):
    """One replicate of ``simulate``: trajectory rows and event-log rows."""
    s, p = rc.scenario, rc.params
    if s in KERNEL_SCENARIOS and not rc.events:
        return _simulate_kernel(rng, rep, rc), []
    if s == "feller":
        r, K = p["r"], p["window"]
        n = rng.binomial(int(round(r)), K / r) if K < r else int(round(r))
        counts, _ = simulate_counts(p["a"], 0.0, K, K * rng.random(n), rc.times, rng)
        return [(rep, t, "mass", c / K) for t, c in zip(rc.times, counts)], []
    if s == "cox":
        pc = sample_cox(p["mass"], p["window"], rng)
        return [(rep, 0.0, "points", len(pc)), (rep, 0.0, "estimate", estimate_cox(pc))], []
    if s == "environment" and p["mode"] == "limit":
        cfg = rc.engine_config
        counts = environment_run(cfg.variants.environment, cfg.model, rc.times, rng, "limit", y0=p["y0"], h=p["h"])
        return _count_rows(rep, rc.times, counts, cfg.model.window), []
    if s == "environment":
        cfg = rc.engine_config
        counts = environment_run(cfg.variants.environment, cfg.model, rc.times, rng, "prelimit", n0=rc.n0)
        return _count_rows(rep, rc.times, counts, cfg.model.levels.r), []
    rows, state = _simulate_engine(rng, rep, rc, rc.events)
    events = [[str(rep)] + row for row in state.history.csv_rows()] if rc.events else []
    return rows, events


def _oracle_rep(rng, rep: int, rc: RunConfig) -> List[Row]:
    """One replicate of the projected count chain for a scenario."""
    s, p = rc.scenario, rc.params
    cfg = rc.engine_config
    times = list(rc.times)
    if s in ("base", "pure_death", "harris", "genealogy", "exp_levels", "conditioned_ext"):
        lv = cfg.model.levels
        counts = oracle.gillespie_bd(oracle.BDRates.from_levels(lv), rc.n0, times, rng)
    elif s == "conditioned_nonext":
        res = oracle.gillespie_custom(oracle.nonextinction_transitions(cfg.model.levels), [rc.n0 + 1], times, rng)
        counts = res.counts[:, 0]
    elif s == "immigration":
        lv = cfg.model.levels
        trans = oracle.BDRates.from_levels(lv).transitions()
        nu = cfg.variants.immigration.rate(lv.r)
        trans.append((lambda n: nu, (1,)))
        counts = oracle.gillespie_custom(trans, [rc.n0], times, rng).counts[:, 0]
    elif s == "multioffspring":
        trans = oracle.multioffspring_transitions(p["offspring"], p["b"], p["r"])
        counts = oracle.gillespie_custom(trans, [rc.n0], times, rng).counts[:, 0]
    elif s == "multitype":
        spec = cfg.variants.multitype
        types = rng.choice(spec.m, size=rc.n0, p=spec.stationary)
        start = np.bincount(types, minlength=spec.m)
        res = oracle.gillespie_custom(oracle.multitype_transitions(spec.rates, spec.b, p["r"]), start, times, rng)
        counts = res.counts.sum(axis=1)
    elif s == "catastrophe":
        lv = LevelParams(p["a"], p["b"], p["r"])
        spec = cfg.variants.catastrophe
        counts = [oracle.catastrophe_bd_sample(lv, rc.n0, t, spec.event_rate, spec.marks, rng) for t in times[-1:]]
        times = times[-1:]
    else:
        raise ConfigError([f"no projected oracle for scenario {s!r}"])
    return [(rep, t, "count", int(c)) for t, c in zip(times, counts)]


def _genealogy_rep(rng, rep: int, rc: RunConfig):
    cfg = rc.engine_config
    T = rc.times[-1]
    state = engine.init_uniform(rc.n0, cfg, rng, record=True)
    engine.advance(state, T, cfg)
    grid = np.linspace(0.0, T, int(rc.params.get("grid", 20)) + 1)[:-1]
    rows = [(rep, float(t), "ancestors", engine.ancestors_at(state.history, float(t), T, cfg)[0]) for t in grid]
    rows.append((rep, T, "count", engine.observe_count(state)))
    events = [[str(rep)] + row for row in state.history.csv_rows()]
    return rows, events


# ----------------------------------------------------------------------------
# Output handling
# ----------------------------------------------------------------------------


class _Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.written: List[Path] = []
        self._made_dir = False

    def path(self, name: str) -> Path:
        if not self.dir.exists():
            self.dir.mkdir(parents=True)
            self._made_dir = True
        p = self.dir / name
        self.written.append(p)
        return p

    def discard(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)
        if self._made_dir:
            try:
                self.dir.rmdir()
            except OSError:
                pass


def _write_trajectory(path: Path, rows: Sequence[Row]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for rep, t, name, value in rows:
            w.writerow([rep, fmt(t), name, value if isinstance(value, (int, np.integer)) else fmt(value)])


def _write_events(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate"] + engine.History.csv_header())
        w.writerows(rows)


def write_reports(path: Path, reports: Sequence[TestReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TestReport.HEADER)
        for rep in reports:
            w.writerow(rep.row())


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError(["--config is required for this command"])
    rc = parse_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    if args.replicates is not None:
        rc.replicates = args.replicates
    if args.workers is not None:
        rc.workers = args.workers
    if args.out is not None:
        rc.out = args.out
    return rc


def cmd_simulate(args, outputs_for) -> int:
    rc = _load(args)
    out = outputs_for(rc.out)
    res = map_replicates(_simulate_rep, rc.replicates, rc.seed, "simulate", rc.workers, (rc,))
    _write_trajectory(out.path("trajectory.csv"), [row for rows, _ in res for row in rows])
    if rc.events and any(ev for _, ev in res):
        _write_events(out.path("events.csv"), [row for _, ev in res for row in ev])
    return 0


def cmd_oracle(args, outputs_for) -> int:
    rc = _load(args)
    out = outputs_for(rc.out)
    res = map_replicates(_oracle_rep, rc.replicates, rc.seed, "oracle", rc.workers, (rc,))
    _write_trajectory(out.path("oracle.csv"), [row for rows in res for row in rows])
    return 0


def cmd_genealogy(args, outputs_for) -> int:
    rc = _load(args)
    if rc.scenario not in ("base", "pure_death", "harris", "genealogy"):
        raise ConfigError([f"genealogy needs a plain constant-coefficient scenario, got {rc.scenario!r}"])
    out = outputs_for(rc.out)
    res = map_replicates(_genealogy_rep, rc.replicates, rc.seed, "genealogy", rc.workers, (rc,))
    _write_trajectory(out.path("genealogy.csv"), [row for rows, _ in res for row in rows])
    _write_events(out.path("events.csv"), [row for _, ev in res for row in ev])
    return 0


def _parse_suite(text: Optional[str]) -> List[int]:
    from .acceptance import CRITERIA

    if not text or text == "all":
        return sorted(CRITERIA)
    chosen = []
    for part in text.split(","):
        part = part.strip()
        if not part.isdigit() or int(part) not in CRITERIA:
            raise ConfigError([f"--suite: unknown criterion {part!r} (choose from 1-{max(CRITERIA)} or 'all')"])
        chosen.append(int(part))
    return sorted(set(chosen))


def cmd_verify(args, outputs_for) -> int:
    from .acceptance import run_suite

    suite = _parse_suite(args.suite)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    out = outputs_for(args.out or "out")
    reports = run_suite(suite, seed=seed, workers=args.workers or 1, echo=print)
    write_reports(out.path("reports.csv"), reports)
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return 1 if failed else 0


COMMANDS = {"simulate": cmd_simulate, "oracle": cmd_oracle, "genealogy": cmd_genealogy, "verify": cmd_verify}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levelsim", description="Level-based branching particle simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run a scenario and write trajectory.csv (and events.csv if requested)"),
        ("oracle", "run the projected count chain for a scenario and write oracle.csv"),
        ("genealogy", "record histories and write ancestor counts to genealogy.csv"),
        ("verify", "run the acceptance suite and write reports.csv"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=_u64, help="override the seed")
        p.add_argument("--replicates", type=_positive, help="override the replicate count")
        p.add_argument("--workers", type=_positive, help="worker processes")
        p.add_argument("--out", help="output directory")
        if name == "verify":
            p.add_argument("--suite", default="all", help="comma-separated criterion numbers, or 'all'")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    made: List[_Outputs] = []

    def outputs_for(out_dir) -> _Outputs:
        o = _Outputs(Path(out_dir))
        made.append(o)
        return o

    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, outputs_for)
    except ConfigError as e:
        for m in made:
            m.discard()
        for problem in e.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (LevelSimError, OSError) as e:
        for m in made:
            m.discard()
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BaseException:
        for m in made:
            m.discard()
        raise
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
