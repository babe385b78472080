"""Command line driver.

Every command reads one INI file and writes its artifacts to the configured
output directory.  Each CSV starts with a comment line carrying the config
hash and seed, so every artifact can be traced back to its inputs.

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 self-test failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import experiments as ex
from .benchmarks2d import FAMILIES, LowAcceptanceError, write_column_csv
from .darcy import SolverError
from .grf import FactorizationError
from .measures import gaussian_sampler, write_samples_csv
from .metrics import field_l2_error, pearson, variance_scatter, write_rows_csv
from .monge_map import LinearReadoutMap, TrainConfig, TrainingDivergedError
from .ot_core import InfeasibleError
from .pcn import PcnConfig, posterior_stats
from .plugin_map import conditional_sample

log = logging.getLogger("condot")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SUITE = 0, 1, 2, 3
NUMERICAL_ERRORS = (SolverError, FactorizationError, TrainingDivergedError, InfeasibleError,
                    LowAcceptanceError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def _words(text):
    return [t for t in text.replace(",", " ").split()]


# section -> key -> (parser, default); defaults follow the reference experiments
SCHEMAS = {
    "bench2d": {
        "bench2d": {
            "families": (_words, "pinwheel, two_moons, checkerboard, swiss_roll"),
            "J": (int, "20000"),
            "epsilon": (float, "5e-3"),
            "k": (int, "2"),
            "slices": (_floats, "-0.5, 0.0, 0.5"),
            "n_eval": (int, "5000"),
            "delta": (float, "0.05"),
            "ot_neighbours": (int, "16"),
            "seed": (int, "0"),
        },
        "output": {"dir": (str, "out/bench2d")},
    },
    "darcy": {
        "darcy": {
            "grid": (int, "16"),
            "lengthscale": (float, "0.5"),
            "sigma": (float, "0.01"),
            "J": (int, "100000"),
            "modes": (int, "20"),
            "y_features": (int, "16"),
            "n_truth": (int, "4"),
            "n_posterior": (int, "4000"),
            "seed": (int, "0"),
        },
        "pcn": {
            "iterations": (int, "600000"),
            "burn_in": (int, "50000"),
            "beta": (float, "0.1"),
            "thin": (int, "20"),
            "target_acceptance": (float, "0.25"),
        },
        "plugin": {
            "epsilon": (float, "1.0"),
            "k": (int, "2"),
            "y_weight": (float, "1.0"),
            "ot_neighbours": (int, "16"),
        },
        "monge": {
            "lam": (float, "0.1"),
            "iterations": (int, "1000"),
            "batch_size": (int, "1024"),
            "learning_rate": (float, "1e-4"),
            "n_features": (int, "512"),
            "init": (str, "gaussian"),
            "monotone_pairs": (int, "10000"),
        },
        "output": {"dir": (str, "out/darcy")},
    },
}


def default_config_text(kind: str) -> str:
    lines = []
    for section, keys in SCHEMAS[kind].items():
        lines.append(f"[{section}]")
        lines += [f"{key} = {default}" for key, (_, default) in keys.items()]
        lines.append("")
    return "\n".join(lines)


@dataclass
class Config:
    kind: str
    values: dict
    hash: str
    path: Path

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values[self.kind]["seed"]

    @property
    def out(self) -> Path:
        return Path(self.values["output"]["dir"])

    def stamp(self) -> list:
        return [f"config_hash={self.hash} seed={self.seed}"]


def _line_of(text: str, section: str, key: str):
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
        elif current == section and line.split("=", 1)[0].split(":", 1)[0].strip().lower() == key.lower():
            return no
    return None


def load_config(path, kind: str, out_override=None) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    schema = SCHEMAS[kind]
    values = {}
    for section, keys in schema.items():
        if not parser.has_section(section):
            raise ConfigError(f"{path}: missing section [{section}]")
        given = {k.lower(): k for k in parser[section]}
        for key in given:
            if key not in {k.lower() for k in keys}:
                raise ConfigError(f"{path}:{_line_of(text, section, key)}: unknown field "
                                  f"'{given[key]}' in [{section}]")
        values[section] = {}
        for key, (conv, _) in keys.items():
            if key.lower() not in given:
                raise ConfigError(f"{path}: missing field '{key}' in [{section}]")
            raw = parser[section][given[key.lower()]]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{_line_of(text, section, key)}: bad value for "
                                  f"'{key}' in [{section}]: {exc}") from None
    if out_override is not None:
        values["output"]["dir"] = str(out_override)
    canonical = json.dumps({s: {k: str(v) for k, v in sec.items()} for s, sec in values.items()
                            if s != "output"}, sort_keys=True)
    cfg = Config(kind, values, hashlib.sha256(canonical.encode()).hexdigest()[:16], path)
    _validate(cfg)
    return cfg


def _validate(cfg: Config):
    def need(cond, msg):
        if not cond:
            raise ConfigError(f"{cfg.path}: {msg}")

    if cfg.kind == "bench2d":
        b = cfg["bench2d"]
        for fam in b["families"]:
            need(fam in FAMILIES, f"unknown family '{fam}' (choose from {', '.join(FAMILIES)})")
        need(b["J"] >= 2 and b["k"] >= 1 and b["n_eval"] >= 1, "J, k and n_eval must be positive")
        need(b["epsilon"] > 0 and b["delta"] > 0, "epsilon and delta must be positive")
        need(len(b["slices"]) >= 1, "slices must list at least one value")
    else:
        d, p = cfg["darcy"], cfg["pcn"]
        need(d["grid"] >= 4 and d["J"] >= 2 and d["modes"] >= 1 and d["n_truth"] >= 1,
             "grid >= 4, J >= 2, modes >= 1 and n_truth >= 1 are required")
        need(d["sigma"] > 0 and d["lengthscale"] > 0, "sigma and lengthscale must be positive")
        need(0 < p["beta"] <= 1 and p["iterations"] > p["burn_in"] >= 0, "invalid [pcn] settings")
        need(cfg["monge"]["init"] in ("gaussian", "identity"), "monge init must be gaussian or identity")


# --------------------------------------------------------------------- bench2d

def cmd_bench2d(cfg: Config) -> int:
    b = cfg["bench2d"]
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for fam in b["families"]:
        res = ex.run_bench2d(fam, J=b["J"], epsilon=b["epsilon"], k=b["k"], slices=b["slices"],
                             n_eval=b["n_eval"], delta=b["delta"], seed=b["seed"],
                             ot_neighbours=b["ot_neighbours"])
        fdir = out / fam
        fdir.mkdir(exist_ok=True)
        write_samples_csv(fdir / "dataset.csv", res.Y, res.U, cfg.stamp())
        (fdir / "plugin.json").write_text(res.plugin.to_json(), encoding="utf-8")
        for y0 in res.slices:
            tag = f"{y0:+.3f}"
            write_column_csv(fdir / f"samples_y{tag}.csv", "u", res.samples[y0], cfg.stamp())
            write_column_csv(fdir / f"slab_y{tag}.csv", "u", res.truths[y0], cfg.stamp())
            rows.append((fam, y0, res.w1[y0], res.acceptance[y0], b["n_eval"]))
        log.info("%s: W1 %s", fam, ", ".join(f"{res.w1[y]:.4f}" for y in res.slices))
    write_rows_csv(out / "summary.csv", ["family", "y0", "w1", "slab_acceptance", "n"], rows, cfg.stamp())
    return EXIT_OK


# --------------------------------------------------------------------- darcy

def _setup(cfg: Config):
    d = cfg["darcy"]
    return ex.darcy_setup(n_grid=d["grid"], lengthscale=d["lengthscale"], sigma=d["sigma"], J=d["J"],
                          n_modes=d["modes"], seed=d["seed"], n_y_features=d["y_features"])


def _truths(cfg, setup):
    return ex.darcy_truths(setup, cfg["darcy"]["n_truth"], seed=cfg.seed)


def _field_rows(setup, columns: dict):
    nodes = setup.problem.grid.nodes
    names = list(columns)
    rows = [(i, nodes[i, 0], nodes[i, 1], *(columns[n][i] for n in names)) for i in range(nodes.shape[0])]
    return ["node", "x1", "x2", *names], rows


def _read_table(path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    cols = np.array(rows[1:], dtype=np.float64).T
    return dict(zip(rows[0], cols))


def darcy_simulate(cfg, setup, truths):
    out = cfg.out
    Ut, Yt = truths
    write_samples_csv(out / "training.csv", setup.Y, setup.C, cfg.stamp())
    write_samples_csv(out / "truths.csv", Yt, Ut, cfg.stamp())


def darcy_pcn(cfg, setup, truths):
    p = cfg["pcn"]
    stats = []
    for i, y in enumerate(truths[1]):
        pc = PcnConfig(beta=p["beta"], iterations=p["iterations"], burn_in=p["burn_in"], thin=p["thin"],
                       target_acceptance=p["target_acceptance"], seed=ex.derive_seed(cfg.seed, f"darcy/pcn/{i}"))
        chain = ex.darcy_pcn(setup, y, pc)
        mean, var = posterior_stats(chain)
        chain.write_csv(cfg.out / f"pcn_{i}_trace.csv", cfg.stamp())
        (cfg.out / f"pcn_{i}_summary.json").write_text(chain.summary_json(), encoding="utf-8")
        header, rows = _field_rows(setup, {"mean": mean, "var": var})
        write_rows_csv(cfg.out / f"pcn_{i}_stats.csv", header, rows, cfg.stamp())
        log.info("pcn %d: acceptance %.3f, beta %.4f", i, chain.acceptance_rate, chain.final_beta)
        stats.append((mean, var))
    return stats


def _write_posterior(cfg, setup, method, i, coefs):
    fields = setup.fields_from_coefs(coefs)
    header = [f"c{j + 1}" for j in range(coefs.shape[1])]
    write_rows_csv(cfg.out / f"{method}_{i}_samples.csv", header, coefs.tolist(), cfg.stamp())
    h, rows = _field_rows(setup, {"mean": fields.mean(0), "var": fields.var(0, ddof=1)})
    write_rows_csv(cfg.out / f"{method}_{i}_stats.csv", h, rows, cfg.stamp())
    return fields


def darcy_plugin(cfg, setup, truths):
    p = cfg["plugin"]
    plugin = ex.darcy_plugin(setup, epsilon=p["epsilon"], k=p["k"], seed=cfg.seed, y_weight=p["y_weight"],
                             ot_neighbours=p["ot_neighbours"])
    (cfg.out / "plugin.json").write_text(plugin.to_json(), encoding="utf-8")
    return [_plugin_posterior(cfg, setup, plugin, i, y) for i, y in enumerate(truths[1])]


def _plugin_posterior(cfg, setup, plugin, i, y):
    coefs = conditional_sample(plugin, setup.y_features(y)[0], cfg["darcy"]["n_posterior"],
                               gaussian_sampler(setup.n_modes), ex.derive_seed(cfg.seed, f"darcy/plugin/post/{i}"))
    return _write_posterior(cfg, setup, "plugin", i, coefs)


def _monge_config(cfg) -> TrainConfig:
    m = cfg["monge"]
    return TrainConfig(lam=m["lam"], iterations=m["iterations"], batch_size=m["batch_size"],
                       learning_rate=m["learning_rate"], n_features=m["n_features"], init=m["init"],
                       seed=ex.derive_seed(cfg.seed, "darcy/monge") % (1 << 31))


def darcy_monge(cfg, setup, truths):
    res = ex.darcy_monge(setup, _monge_config(cfg))
    (cfg.out / "monge.json").write_text(res.map.to_json(), encoding="utf-8")
    res.write_trace_csv(cfg.out / "monge_trace.csv", cfg.stamp())
    return res.map, [_monge_posterior(cfg, setup, res.map, i, y) for i, y in enumerate(truths[1])]


def _monge_posterior(cfg, setup, tmap, i, y):
    n = cfg["darcy"]["n_posterior"]
    V = ex.rng_for(cfg.seed, f"darcy/monge/post/{i}").standard_normal((n, setup.n_modes))
    coefs = tmap(np.repeat(setup.y_standardized(y), n, 0), V)
    return _write_posterior(cfg, setup, "monge", i, coefs)


def darcy_compare(cfg, setup, truths):
    """Reuse artifacts of earlier stages when present; run missing stages otherwise."""
    out, n_truth = cfg.out, len(truths[1])
    files = [out / f"pcn_{i}_stats.csv" for i in range(n_truth)]
    if all(f.exists() and _stamp_ok(f, cfg) for f in files):
        pcn = [(t["mean"], t["var"]) for t in map(_read_table, files)]
    else:
        pcn = darcy_pcn(cfg, setup, truths)
    methods = {}
    if not all(_stamp_ok(out / f"plugin_{i}_stats.csv", cfg) for i in range(n_truth)):
        darcy_plugin(cfg, setup, truths)
    methods["plugin"] = [_read_table(out / f"plugin_{i}_stats.csv") for i in range(n_truth)]
    if (out / "monge.json").exists() and all(_stamp_ok(out / f"monge_{i}_stats.csv", cfg)
                                             for i in range(n_truth)):
        tmap = LinearReadoutMap.from_json((out / "monge.json").read_text(encoding="utf-8"))
    else:
        tmap, _ = darcy_monge(cfg, setup, truths)
    methods["monge"] = [_read_table(out / f"monge_{i}_stats.csv") for i in range(n_truth)]
    rows = []
    for name, tables in methods.items():
        for i, (t, (pm, pv)) in enumerate(zip(tables, pcn)):
            rel, rho = field_l2_error(t["mean"], pm, relative=True), pearson(t["var"], pv)
            rows.append((name, i, rel, rho))
            h, fr = _field_rows(setup, {"pcn_mean": pm, "pcn_var": pv, f"{name}_mean": t["mean"],
                                        f"{name}_var": t["var"]})
            write_rows_csv(out / f"compare_{name}_{i}_fields.csv", h, fr, cfg.stamp())
            write_rows_csv(out / f"compare_{name}_{i}_scatter.csv", ["pcn_var", f"{name}_var"],
                           variance_scatter(pv, t["var"]).tolist(), cfg.stamp())
            log.info("%s %d: rel L2 mean %.3f, variance Pearson %.3f", name, i, rel, rho)
    mono = ex.darcy_monotonicity(setup, tmap, cfg["monge"]["monotone_pairs"], seed=cfg.seed)
    write_rows_csv(out / "compare_summary.csv", ["method", "truth", "rel_l2_mean", "var_pearson"], rows,
                   cfg.stamp() + [f"monotonicity_fraction={mono!r}"])
    log.info("monotonicity fraction %.4f", mono)


def _stamp_ok(path: Path, cfg: Config) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.readline().strip() == f"# {cfg.stamp()[0]}"
    except OSError:
        return False


DARCY_STAGES = {"simulate": darcy_simulate, "pcn": darcy_pcn, "plugin": darcy_plugin,
                "monge": darcy_monge, "compare": darcy_compare}


def cmd_darcy(stage: str, cfg: Config) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    setup = _setup(cfg)
    DARCY_STAGES[stage](cfg, setup, _truths(cfg, setup))
    return EXIT_OK


# --------------------------------------------------------------------- selftest

def cmd_selftest(full: bool = False) -> int:
    from .selftest import run_all

    results = run_all(quick=not full)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all suites passed" if ok else "self-test FAILED")
    return EXIT_OK if ok else EXIT_SUITE


# --------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="condot", description="Conditional optimal transport experiments")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    b = sub.add_parser("bench2d", help="2D benchmark pipeline")
    b.add_argument("config")
    b.add_argument("--out", help="override [output] dir")
    d = sub.add_parser("darcy", help="Darcy inverse-problem pipeline")
    d.add_argument("stage", choices=list(DARCY_STAGES))
    d.add_argument("config")
    d.add_argument("--out", help="override [output] dir")
    s = sub.add_parser("selftest", help="run the oracle suites")
    s.add_argument("--full", action="store_true", help="acceptance-size suites")
    c = sub.add_parser("config", help="print a default config")
    c.add_argument("kind", choices=list(SCHEMAS))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "config":
            print(default_config_text(args.kind), end="")
            return EXIT_OK
        if args.command == "selftest":
            return cmd_selftest(args.full)
        if args.command == "bench2d":
            return cmd_bench2d(load_config(args.config, "bench2d", args.out))
        return cmd_darcy(args.stage, load_config(args.config, "darcy", args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
