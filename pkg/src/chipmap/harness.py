"""Command-line front end: gen, train, eval, report, ablate.

Every artifact is a pure function of (config, master seed). Wall-clock timings
and timestamps go only to ``timing.log`` in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import ABLATIONS, Agent, AgentConfig, evaluate_agent, run_training
from .autodiff import NonFiniteError
from .baselines import AnnealConfig, QuboWeights, greedy_map, qubo_map, trivial_map
from .circuit import gen_benchmark_suite, read_circuit, write_circuit
from .env import EnvConfig, MappingEnv, RewardWeights, load_imbalance, run_assignment
from .hardware import CalibrationTable, build_topology, write_descriptor
from .noise import NoiseParams, telemetry_hash
from .stats import anova, compare

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
METHODS = ("agent", "qubo", "greedy", "trivial")
RESULT_COLUMNS = ("method", "circuit_id", "family", "n", "seed", "fidelity", "n_inter", "depth",
                  "balance", "reward", "wall_ms", "error", "noise_hash")
TABLE_METRICS = ("fidelity", "n_inter", "error", "depth")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    topology: dict = field(default_factory=lambda: {"kind": "hex6", "k": 20, "seed": 0})
    noise: dict = field(default_factory=dict)
    suite: dict = field(default_factory=lambda: {
        "scales": list(range(20, 101, 10)), "variants": 10,
        "grover_iterations": 1, "vqe_layers": 2})
    train_filter: dict = field(default_factory=dict)  # optional {"families": [...], "scales": [...]}
    agent: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    reward: dict = field(default_factory=dict)
    anneal: dict = field(default_factory=dict)
    eval_seeds: list = field(default_factory=lambda: list(range(10)))
    eval_episode: int | None = None  # reward schedule position for evaluation; default: final
    seed: int = 0

    def __post_init__(self):
        if not self.eval_seeds:
            raise ConfigError("eval_seeds must be non-empty")

    # derived objects
    def hardware(self):
        t = dict(self.topology)
        calib = CalibrationTable(**t.pop("calib")) if "calib" in t else None
        try:
            return build_topology(t.pop("kind"), t.pop("M", None), t.pop("k", 12), calib,
                                  t.pop("seed", 0), t.pop("chip_edges", None))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad topology: {exc}") from exc

    def agent_config(self, ablate=()) -> AgentConfig:
        d = dict(self.agent)
        d.setdefault("seed", self.seed)
        d["ablate"] = tuple(d.get("ablate", ())) + tuple(a for a in ablate if a)
        try:
            return AgentConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def env_config(self, n_pad=None) -> EnvConfig:
        return EnvConfig(**{**self.env, "n_pad": n_pad})

    def make_env(self, hw, n_pad=None) -> MappingEnv:
        try:
            return MappingEnv(hw, NoiseParams(**self.noise), RewardWeights(**self.reward),
                              self.env_config(n_pad))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def anneal_config(self, seed: int) -> AnnealConfig:
        d = dict(self.anneal)
        w = QuboWeights(**d.pop("weights", {}))
        return AnnealConfig(seed=seed, weights=w, **d)

    def to_dict(self) -> dict:
        return asdict(self)


def smoke_config(seed: int = 0) -> ExperimentConfig:
    """Desk-scale configuration: 2 chips x 4 qubits, 6- and 8-qubit circuits, small networks."""
    return ExperimentConfig(
        topology={"kind": "custom", "M": 2, "k": 4, "seed": 0},
        suite={"scales": [6, 8], "variants": 2, "grover_iterations": 1, "vqe_layers": 2},
        train_filter={"families": ["QFT"], "scales": [8]},
        agent={"episodes": 150, "batch": 32, "dna_hidden": 32, "dna_head": [32, 16],
               "d_model": 64, "heads": 8, "trunk": 64},
        env={"fidelity_model": "product"},
        eval_seeds=[0, 1, 2],
        seed=seed)


def load_config(path, smoke: bool, seed: int | None) -> ExperimentConfig:
    base = smoke_config() if smoke else ExperimentConfig()
    if path:
        try:
            overrides = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        d = base.to_dict()
        unknown = sorted(set(overrides) - set(d))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        for k, v in overrides.items():
            if isinstance(d[k], dict) and isinstance(v, dict):
                d[k] = {**d[k], **v}
            else:
                d[k] = v
        base = ExperimentConfig(**d)
    if seed is not None:
        base.seed = seed
    return base


# -- filesystem helpers -------------------------------------------------------

class Timing:
    """Sidecar log for wall-clock data; never read back by the pipeline."""

    def __init__(self, out: Path):
        self.path = out / "timing.log"

    def log(self, msg: str) -> None:
        with open(self.path, "a") as fh:
            fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {msg}\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def read_manifest(out: Path):
    path = out / "manifest.csv"
    if not path.exists():
        raise ConfigError(f"no suite found at {path}; run `gen` first")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [(r, read_circuit(out / r["file"])) for r in rows]


def _train_circuits(cfg: ExperimentConfig, suite):
    fam = set(cfg.train_filter.get("families", [])) or None
    scales = set(cfg.train_filter.get("scales", [])) or None
    picked = [c for r, c in suite if (fam is None or c.family in fam)
              and (scales is None or c.n_qubits in scales)]
    if not picked:
        raise ConfigError("train_filter selects no circuits")
    return picked


def eval_seed(master: int, circuit_id: str, seed: int) -> int:
    """Noise-stream seed shared by every method for one (circuit, seed) cell."""
    ss = np.random.SeedSequence([master, zlib.crc32(circuit_id.encode()), seed])
    return int(ss.generate_state(1)[0])


# -- commands ----------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, out: Path) -> list[Path]:
    circuits = gen_benchmark_suite(cfg.suite["scales"], cfg.suite["variants"], cfg.seed,
                                   cfg.suite.get("grover_iterations", 1),
                                   cfg.suite.get("vqe_layers", 2))
    cdir = out / "circuits"
    cdir.mkdir(parents=True, exist_ok=True)
    files = []
    rows = []
    for c in circuits:
        name = f"{c.name}.json"
        write_circuit(c, cdir / name)
        files.append(cdir / name)
        rows.append([f"circuits/{name}", c.family, c.n_qubits, c.name.rsplit("-v", 1)[1], c.seed])
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "family", "n", "variant", "seed"])
        w.writerows(rows)
    write_descriptor(cfg.hardware(), out / "hardware.json")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return files


def cmd_train(cfg: ExperimentConfig, out: Path, ablate=(), resume=False, log=print,
              stop_after=None, train_dir: Path | None = None):
    suite = read_manifest(out)
    hw = cfg.hardware()
    n_pad = max(c.n_qubits for _, c in suite)
    env = cfg.make_env(hw, n_pad)
    acfg = cfg.agent_config(ablate)
    tdir = train_dir or out / "train"
    tdir.mkdir(parents=True, exist_ok=True)

    def progress(row):
        if log:
            log(f"episode {row['episode']:4d}  fidelity {row['fidelity']:.4f}  "
                f"n_inter {row['n_inter']:3d}  eps {row['epsilon']:.3f}")

    run = run_training(acfg, env, _train_circuits(cfg, suite), tdir, resume=resume,
                       log=progress, stop_after=stop_after)
    return run


def _score_row(method, c, seed, env, s, wall_ms, nhash):
    return {"method": method, "circuit_id": c.circuit_id, "family": c.family, "n": c.n_qubits,
            "seed": seed, "fidelity": env.fidelity(), "n_inter": s.n_inter, "depth": s.depth,
            "balance": load_imbalance(s, env.hw), "reward": float(sum(r["reward"] for r in env.trace)),
            "wall_ms": wall_ms, "error": s.err_sum, "noise_hash": nhash}


def cmd_eval(cfg: ExperimentConfig, out: Path, methods, checkpoint: Path | None = None,
             timing: bool = False, results_name: str = "results.csv"):
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    suite = read_manifest(out)
    hw = cfg.hardware()
    n_pad = max(c.n_qubits for _, c in suite)
    agent = None
    if "agent" in methods:
        ck = checkpoint or out / "train" / "checkpoint.zip"
        if not ck.exists():
            raise ConfigError(f"agent checkpoint missing: {ck}")
        agent, _ = Agent.load(ck)
    episode = cfg.eval_episode
    if episode is None:
        episode = cfg.agent_config().episodes
    clock = Timing(out)
    rows = []
    for _, c in sorted(suite, key=lambda rc: rc[1].circuit_id):
        for seed in cfg.eval_seeds:
            es = eval_seed(cfg.seed, c.circuit_id, seed)
            for method in methods:
                env = cfg.make_env(hw, n_pad)
                t0 = time.perf_counter()
                if method == "agent":
                    s = evaluate_agent(agent, env, c, es, episode)
                else:
                    mapper = {"trivial": trivial_map, "greedy": greedy_map}.get(method)
                    assign = (mapper(c, hw) if mapper else
                              qubo_map(c, hw, cfg.anneal_config(es % (2 ** 31))))
                    s = run_assignment(env, c, assign, es, episode)
                ms = 1000.0 * (time.perf_counter() - t0)
                # every method sees at least the warm-up window plus one step per placement
                common = env.config.history_len + c.n_qubits
                nhash = telemetry_hash(np.stack(s.noise_log[:common]))
                rows.append(_score_row(method, c, seed, env, s, round(ms, 3) if timing else 0, nhash))
                clock.log(f"eval {method} {c.circuit_id} seed={seed} wall_ms={ms:.3f}")
    with open(out / results_name, "w", newline="") as fh:
        fh.write("# chipmap results v1\n")
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in RESULT_COLUMNS])
    return rows


class ResultsParseError(ValueError):
    pass


def read_results(path):
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]
    if not body:
        raise ResultsParseError(f"{path}: no header")
    header = next(csv.reader([body[0][1]]))
    missing = [c for c in RESULT_COLUMNS[:11] if c not in header]
    if missing:
        raise ResultsParseError(f"{path}:{body[0][0]}: missing columns {missing}")
    numeric = ("fidelity", "n_inter", "depth", "balance", "reward", "wall_ms", "error")
    for lineno, ln in body[1:]:
        vals = next(csv.reader([ln]))
        if len(vals) != len(header):
            raise ResultsParseError(f"{path}:{lineno}: expected {len(header)} fields, "
                                    f"got {len(vals)}")
        r = dict(zip(header, vals))
        try:
            for k in numeric:
                if k in r:
                    r[k] = float(r[k]) if r[k] != "" else math.nan
        except ValueError as exc:
            raise ResultsParseError(f"{path}:{lineno}: {exc}") from exc
        rows.append(r)
    return rows


def summarize(rows):
    """Per-method mean and sample std of the table metrics, methods in canonical order."""
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    methods += sorted({r["method"] for r in rows} - set(methods))
    table = {}
    for m in methods:
        picked = [r for r in rows if r["method"] == m]
        vals = {k: np.array([r[k] for r in picked]) for k in TABLE_METRICS if k in picked[0]}
        table[m] = {k: (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0)
                    for k, v in vals.items()}
        table[m]["count"] = len(picked)
    return methods, table


def cmd_report(results_path: Path, out: Path):
    rows = read_results(results_path)
    methods, table = summarize(rows)
    lines = ["Method,Fidelity,Ops,Error,Depth"]
    for m in methods:
        # the error column is optional in results files; its cell stays blank when absent
        cells = [f"{table[m][k][0]:.4f}±{table[m][k][1]:.4f}" if k in table[m] else ""
                 for k in TABLE_METRICS]
        lines.append(",".join([m, *cells]))
    comps = []
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            for k in TABLE_METRICS:
                if k not in table[a]:
                    continue
                va = [r[k] for r in rows if r["method"] == a]
                vb = [r[k] for r in rows if r["method"] == b]
                if len(va) < 2 or len(vb) < 2:
                    continue
                try:
                    comps.append(compare(a, va, b, vb, k))
                except ValueError:
                    continue
    lines.append("")
    lines.append("method_a,method_b,metric,t,df,p,d,significant")
    for c in comps:
        lines.append(",".join([c.method_a, c.method_b, c.metric, f"{c.t:.6g}", f"{c.df:g}",
                               f"{c.p:.6g}", f"{c.d:.6g}", "yes" if c.significant else "no"]))
    if len(methods) >= 2:
        groups = [[r["fidelity"] for r in rows if r["method"] == m] for m in methods]
        try:
            a = anova(groups)
            lines += ["", "anova_metric,F,df_between,df_within,eta2,p",
                      f"fidelity,{a.F:.6g},{a.df_between},{a.df_within},{a.eta2:.6g},{a.p:.6g}"]
        except ValueError:
            pass
    text = "\n".join(lines) + "\n"
    (out / "report.csv").write_text(text)
    return text, table, comps


def cmd_ablate(cfg: ExperimentConfig, out: Path, names, log=print):
    """Train and evaluate one agent per ablation row; each lands in ``ablate-<name>/``."""
    results = {}
    for name in names:
        sub = out / f"ablate-{name}"
        sub.mkdir(parents=True, exist_ok=True)
        ablate = () if name == "full" else (name,)
        cmd_train(cfg, out, ablate, log=log, train_dir=sub)
        results[name] = cmd_eval(cfg, out, ["agent"], sub / "checkpoint.zip",
                                 results_name=f"ablate-{name}/results.csv")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["configuration", "fidelity", "delta_vs_full"])
        full = np.mean([r["fidelity"] for r in results["full"]]) if "full" in results else None
        for name, rows in results.items():
            f = float(np.mean([r["fidelity"] for r in rows]))
            delta = "" if full is None or name == "full" else f"{(f - full) / full * 100:.1f}%"
            w.writerow([name, f"{f:.4f}", delta])
    return results


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chipmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "eval", "report", "ablate"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file overriding the default configuration")
        s.add_argument("--seed", type=int, help="master seed")
        s.add_argument("--out", default="runs/default", help="output directory")
        s.add_argument("--smoke", action="store_true", help="desk-scale configuration")
        if name in ("train", "ablate"):
            s.add_argument("--ablate", default="",
                           help="comma-separated ablations: " + ", ".join(ABLATIONS)
                           + (" (ablate also accepts 'full' and 'all')" if name == "ablate" else ""))
        if name == "train":
            s.add_argument("--resume", action="store_true", help="continue from train_state.pkl")
            s.add_argument("--quiet", action="store_true")
        if name == "eval":
            s.add_argument("--methods", default=",".join(METHODS))
            s.add_argument("--checkpoint", help="agent checkpoint (default OUT/train/checkpoint.zip)")
            s.add_argument("--timing", action="store_true",
                           help="record wall_ms in results (breaks byte-determinism)")
        if name == "report":
            s.add_argument("--results", help="results file (default OUT/results.csv)")
    return p


def _split(s: str):
    return [x.strip() for x in s.split(",") if x.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.smoke, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        clock = Timing(out)
        clock.log(f"start {args.command}")
        if args.command == "gen":
            files = cmd_gen(cfg, out)
            print(f"wrote {len(files)} circuits to {out / 'circuits'}")
        elif args.command == "train":
            run = cmd_train(cfg, out, _split(args.ablate), args.resume,
                            log=None if args.quiet else print)
            print(f"trained {run.episode} episodes; checkpoint at {out / 'train'}")
        elif args.command == "eval":
            rows = cmd_eval(cfg, out, _split(args.methods),
                            Path(args.checkpoint) if args.checkpoint else None, args.timing)
            print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
        elif args.command == "report":
            text, _, _ = cmd_report(Path(args.results) if args.results else out / "results.csv", out)
            print(text, end="")
        elif args.command == "ablate":
            names = _split(args.ablate) or ["all"]
            if names == ["all"]:
                names = ["full", *ABLATIONS]
            bad = [n for n in names if n != "full" and n not in ABLATIONS]
            if bad:
                raise ConfigError(f"unknown ablations {bad}")
            cmd_ablate(cfg, out, names)
        clock.log(f"end {args.command}")
    except (ConfigError, ResultsParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
