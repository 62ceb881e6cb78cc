"""Command-line front end: ``dromo gen|run|verify|plotdata``."""

from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .baselines import MOPO_TRACE_COLUMNS, MopoConfig, run_baseline
from .critic import CriticConfig
from .envs import make_behavior, make_env
from .loop import LoopConfig, TRACE_COLUMNS, coerce, loop_config_from, mean_q, read_config, run_dromo
from .mdp import exact_q, load_mdp, save_mdp
from .offline_data import CountTable, generate_dataset, load_dataset, save_dataset
from .verify import SUITES, failures, run_suite, write_report

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("dromo")


class UsageError(Exception):
    pass


_LOOP_KEYS = {f.name for f in fields(LoopConfig)} - {"beta_auto"}
_KEYS = {
    "env": str, "mdp_file": str, "dataset_file": str, "gamma": float, "behavior": str, "epsilon": float,
    "n_transitions": int, "episode_length": int, "algorithm": str, "alpha": float, "beta": str, "f": float,
    "interp_convention": str, "inner_iters": int, "inner_tol": float, "mopo_lambda": float,
    "mopo_delta_t": float, "mopo_eta": float, "mopo_auto_temp": bool, "mopo_max_steps": int,
    "seed": int, "out": str,
}


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "chain5"
    mdp_file: str | None = None
    dataset_file: str | None = None
    gamma: float = 0.9
    behavior: str = "uniform"
    epsilon: float = 0.3
    n_transitions: int = 1000
    episode_length: int = 100
    algorithm: str = "dromo"
    critic: CriticConfig = CriticConfig()
    beta_auto: bool = False
    loop: LoopConfig = LoopConfig()
    mopo: MopoConfig = MopoConfig()
    seed: int = 0
    out: str = "."

    def path(self, name: str) -> Path:
        return Path(self.out) / name


def build_config(values: dict[str, str], seed: int | None, out: str | None) -> ExperimentConfig:
    unknown = sorted(set(values) - set(_KEYS) - _LOOP_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    try:
        v = {k: coerce(x, _KEYS[k]) for k, x in values.items() if k in _KEYS}
        beta_text = v.pop("beta", "0")
        beta_auto = beta_text == "auto"
        beta = 0.0 if beta_auto else float(beta_text)
        loop = loop_config_from({k: x for k, x in values.items() if k in _LOOP_KEYS})
        loop = replace(loop, beta_auto=beta_auto)
        critic = CriticConfig(alpha=v.pop("alpha", 0.0), beta=beta, f=v.pop("f", 0.5),
                              inner_iters=v.pop("inner_iters", 200), inner_tol=v.pop("inner_tol", 1e-13),
                              interp_convention=v.pop("interp_convention", "verbatim"))
        mopo = MopoConfig(lambda_pen=v.pop("mopo_lambda", 0.0), delta_t=v.pop("mopo_delta_t", 0.0),
                          eta_alpha=v.pop("mopo_eta", 0.01), auto_temp=v.pop("mopo_auto_temp", False),
                          max_steps=v.pop("mopo_max_steps", 1000))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if seed is not None:
        v["seed"] = seed
    if out is not None:
        v["out"] = out
    if "seed" not in v:
        raise UsageError("a seed is required (--seed or 'seed = N' in the config)")
    cfg = ExperimentConfig(critic=critic, beta_auto=beta_auto, loop=loop, mopo=mopo, **v)
    if cfg.algorithm not in ("dromo", "combo", "mopo"):
        raise UsageError(f"unknown algorithm {cfg.algorithm!r}")
    if cfg.n_transitions < 1:
        raise UsageError("n_transitions must be >= 1")
    return cfg


def load_config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        try:
            values = read_config(args.config)
        except OSError as exc:
            raise OSError(f"{args.config}: {exc.strerror}") from exc
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return build_config(values, args.seed, args.out)


def _env(cfg: ExperimentConfig):
    if cfg.mdp_file:
        return load_mdp(cfg.mdp_file)
    try:
        return make_env(cfg.env, cfg.seed, cfg.gamma)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_gen(cfg: ExperimentConfig) -> int:
    mdp = _env(cfg)
    try:
        behavior = make_behavior(cfg.behavior, mdp, cfg.seed, cfg.epsilon)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data = generate_dataset(mdp, behavior, cfg.n_transitions, cfg.seed, cfg.episode_length)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    save_mdp(mdp, cfg.path("mdp.txt"))
    save_dataset(data, cfg.path("dataset.txt"))
    cov = CountTable.from_dataset(data, mdp.shape).coverage()
    print(f"wrote {cfg.path('mdp.txt')} and {cfg.path('dataset.txt')}")
    print(f"coverage {cov!r}")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig) -> int:
    mdp_path = cfg.mdp_file or cfg.path("mdp.txt")
    data_path = cfg.dataset_file or cfg.path("dataset.txt")
    truth = load_mdp(mdp_path)
    data = load_dataset(data_path, truth.shape)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    try:
        if cfg.algorithm == "dromo":
            state, trace = run_dromo(truth, data, cfg.critic, cfg.loop, cfg.seed)
        else:
            state, trace = run_baseline(cfg.algorithm, truth, data, cfg.critic, cfg.loop, cfg.mopo, cfg.seed)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    columns = MOPO_TRACE_COLUMNS if cfg.algorithm == "mopo" else TRACE_COLUMNS
    trace.write(cfg.path("trace.csv"), columns)
    last = trace.rows[-1]
    start = truth if state.start_dist is None else state.start_dist
    pi = state.evaluated
    q_hat = mean_q(start, pi, state.q)
    q_true = mean_q(start, pi, exact_q(truth, pi))
    holds = q_hat <= q_true
    lines = [f"algorithm = {cfg.algorithm}", f"iterations = {state.iter}",
             f"return_true = {float(last['return_true' if 'return_true' in last else 'return_on_truth'])!r}",
             f"return_model = {float(last['return_model' if 'return_model' in last else 'return_on_model'])!r}",
             f"mean_q_hat = {q_hat!r}", f"mean_q_truth = {q_true!r}", f"lower_bound_holds = {str(holds).lower()}"]
    cfg.path("report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_verify(suite: str, n_instances: int | None, seed: int, out: str | None) -> int:
    if suite != "all" and suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {', '.join([*SUITES, 'all'])}")
    if n_instances is not None and n_instances < 1:
        raise UsageError("--instances must be >= 1")
    rows = run_suite(suite, seed, n_instances)
    bad = failures(rows)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        path = Path(out) / f"verify_{suite}.csv"
        write_report(rows, path)
        print(f"wrote {path}")
    for r in bad:
        print(f"FAIL {r.check_name}: lhs={r.lhs!r} rhs={r.rhs!r}")
    print(f"{suite}: {len(rows)} checks, {len(bad)} failed")
    return EXIT_FAIL if bad else EXIT_OK


_SEED_RE = re.compile(r"seed[_-]?(\d+)")


def cmd_plotdata(paths: list[str], out: str) -> int:
    header = None
    records = []
    for idx, p in enumerate(paths):
        m = _SEED_RE.search(str(p))
        seed = int(m.group(1)) if m else idx
        with open(p, newline="") as fh:
            reader = csv.reader(fh)
            cols = next(reader, None)
            if cols is None:
                raise UsageError(f"{p}: empty trace")
            if header is None:
                if "iter" not in cols:
                    raise UsageError(f"{p}: missing column 'iter'")
                header = cols
            missing = [c for c in header if c not in cols]
            if missing:
                raise UsageError(f"{p}: missing column {missing[0]!r}")
            pos = {c: cols.index(c) for c in header}
            for row in reader:
                it = row[pos["iter"]]
                for c in header:
                    if c != "iter":
                        records.append((seed, int(it), c, row[pos[c]]))
    records.sort(key=lambda r: (r[0], r[1], header.index(r[2])))
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "iter", "metric", "value"])
        w.writerows(records)
    print(f"wrote {out} ({len(records)} rows)")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dromo", description="Distributionally robust offline model-based policy optimization lab.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb, help_ in (("gen", "write an MDP and an offline dataset"), ("run", "run DROMO, COMBO or MOPO")):
        p = sub.add_parser(verb, help=help_)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", default="all")
    p.add_argument("--instances", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="directory for the report CSV")
    p = sub.add_parser("plotdata", help="merge trace CSVs into long format")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", required=True, help="output CSV path")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "gen":
            return cmd_gen(load_config(args))
        if args.verb == "run":
            return cmd_run(load_config(args))
        if args.verb == "verify":
            return cmd_verify(args.suite, args.instances, args.seed, args.out)
        return cmd_plotdata(args.traces, args.out)
    except UsageError as exc:
        print(f"dromo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dromo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"dromo: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
