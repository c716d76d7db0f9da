"""Seeded batch experiments on Garnets, persisted as CSV + JSON."""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .analysis import assumption_check, bound_report, concentrability, sql_dpp_bound_rhs
from .garnet import GarnetSpec, generate
from .mdp import ContractError, greedy, optimal_q, uniform_distribution
from .schemes import SCHEME_IDS, BetaSchedule, run_scheme
from .seeding import derive_seed

KINDS = ("convergence", "compare", "assumption", "bounds")
NORMS = ("l1_uniform", "sup")
FIGURE_KIND = {"fig1": "convergence", "fig2": "assumption", "fig3": "compare"}
OUTPUT_DIR_ENV = "MOVILAB_OUTPUT_DIR"
REQUIRED = ("kind", "garnet", "master_seed")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return format(float(x), ".17g")


def default_checkpoints(iterations: int, kind: str = "compare") -> List[int]:
    last = iterations - 1 if kind == "bounds" else iterations
    points = []
    p = 1
    while p <= last:
        points.append(p)
        p *= 10
    if last >= 1 and points[-1] != last:
        points.append(last)
    return points


# --------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    kind: str
    garnet: Dict[str, int]
    master_seed: int
    gamma: float = 0.9
    schemes: List[str] = None
    iterations: int = None
    n_mdps: int = 100
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    checkpoints: List[int] = None
    output_dir: str = "results"
    eval_norm: str = "l1_uniform"
    sampled: bool = True
    assumption: Optional[Dict] = None
    delta: float = 0.05
    concentrability: str = "exact"

    def garnet_spec(self, seed: int) -> GarnetSpec:
        return GarnetSpec(seed=seed, **self.garnet)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_json() if isinstance(value, BetaSchedule) else value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def config_from_dict(data) -> ExperimentConfig:
    """Build a config with defaults applied, reporting every invalid field at once."""
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object naming the required fields: " + ", ".join(REQUIRED)])
    errors = []
    known = {f.name for f in fields(ExperimentConfig)}
    for key in sorted(set(data) - known):
        errors.append(f"{key}: unknown field")
    for key in REQUIRED:
        if key not in data:
            errors.append(f"{key}: required field missing")

    kind = data.get("kind")
    if "kind" in data and kind not in KINDS:
        errors.append(f"kind: must be one of {list(KINDS)}, got {kind!r}")

    garnet = data.get("garnet")
    if "garnet" in data:
        if not isinstance(garnet, dict):
            errors.append("garnet: must be an object with n_states, n_actions, branching")
        else:
            for key in sorted(set(garnet) - {"n_states", "n_actions", "branching"}):
                errors.append(f"garnet.{key}: unknown field")
            for key in ("n_states", "n_actions", "branching"):
                if key not in garnet:
                    errors.append(f"garnet.{key}: required field missing")
                elif not _is_int(garnet[key]) or garnet[key] < 1:
                    errors.append(f"garnet.{key}: must be a positive integer")
            if (
                all(_is_int(garnet.get(k)) for k in ("n_states", "branching"))
                and garnet["branching"] > garnet["n_states"]
            ):
                errors.append("garnet.branching: must not exceed garnet.n_states")

    seed = data.get("master_seed")
    if "master_seed" in data and (not _is_int(seed) or not 0 <= seed < 2**64):
        errors.append("master_seed: must be an integer in [0, 2^64)")

    gamma = data.get("gamma", 0.9)
    if not _is_num(gamma) or not 0.0 < gamma < 1.0:
        errors.append("gamma: must be a number in (0, 1)")

    valid_kind = kind in KINDS
    default_schemes = {
        "convergence": ["avi", "movi"],
        "compare": list(SCHEME_IDS),
        "assumption": ["movi"],
        "bounds": ["movi"],
    }
    schemes = data.get("schemes", default_schemes.get(kind, ["movi"]))
    if not isinstance(schemes, list) or not schemes or any(s not in SCHEME_IDS for s in schemes):
        errors.append(f"schemes: must be a non-empty list drawn from {list(SCHEME_IDS)}")
    elif len(set(schemes)) != len(schemes):
        errors.append("schemes: duplicate scheme identifiers")
    elif kind in ("assumption", "bounds") and schemes != ["movi"]:
        errors.append(f"schemes: kind {kind!r} runs MoVI only")

    iterations = data.get("iterations", 500 if kind == "bounds" else 10_000)
    iterations_ok = _is_int(iterations) and iterations >= 1
    if not iterations_ok:
        errors.append("iterations: must be a positive integer")
    elif kind == "bounds" and iterations < 2:
        errors.append("iterations: bounds runs need at least 2 iterations")

    n_mdps = data.get("n_mdps", 100)
    if not _is_int(n_mdps) or n_mdps < 1:
        errors.append("n_mdps: must be a positive integer")

    beta = BetaSchedule()
    if "beta" in data:
        try:
            beta = BetaSchedule.from_json(data["beta"])
        except (ContractError, TypeError, ValueError) as exc:
            errors.append(f"beta: {exc} (use \"empirical_mean\" or {{\"constant\": b}} with 0 <= b < 1)")

    checkpoints = data.get("checkpoints")
    if checkpoints is None:
        checkpoints = default_checkpoints(iterations, kind) if iterations_ok else []
    elif not isinstance(checkpoints, list) or not checkpoints or not all(_is_int(c) for c in checkpoints):
        errors.append("checkpoints: must be a non-empty list of integers")
    elif checkpoints != sorted(set(checkpoints)):
        errors.append("checkpoints: must be strictly ascending")
    elif iterations_ok:
        low = 1
        high = iterations - 1 if kind == "bounds" else iterations
        if checkpoints[0] < low or checkpoints[-1] > high:
            errors.append(f"checkpoints: must lie in [{low}, {high}] for kind {kind!r}")

    output_dir = data.get("output_dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir: must be a non-empty path string")

    eval_norm = data.get("eval_norm", "l1_uniform")
    if eval_norm not in NORMS:
        errors.append(f"eval_norm: must be one of {list(NORMS)}")

    sampled = data.get("sampled", True)
    if not isinstance(sampled, bool):
        errors.append("sampled: must be true or false")

    assumption = data.get("assumption")
    if kind == "assumption":
        params = {"j": 50, "l_values": [0, 1, 2, 5], "n_max": 200}
        if assumption is not None and not isinstance(assumption, dict):
            errors.append("assumption: must be an object with j, l_values, n_max")
        else:
            for key in sorted(set(assumption or {}) - set(params)):
                errors.append(f"assumption.{key}: unknown field")
            params.update(assumption or {})
            if not _is_int(params["j"]) or params["j"] < 1:
                errors.append("assumption.j: must be an integer >= 1")
            lv = params["l_values"]
            if not isinstance(lv, list) or not lv or not all(_is_int(l) and l >= 0 for l in lv):
                errors.append("assumption.l_values: must be a non-empty list of integers >= 0")
            elif lv != sorted(set(lv)):
                errors.append("assumption.l_values: must be strictly ascending")
            if not _is_int(params["n_max"]) or params["n_max"] < 1:
                errors.append("assumption.n_max: must be an integer >= 1")
        assumption = params
    elif assumption is not None and valid_kind:
        errors.append(f"assumption: only valid for kind 'assumption', not {kind!r}")

    delta = data.get("delta", 0.05)
    if not _is_num(delta) or not 0.0 < delta < 1.0:
        errors.append("delta: must be a number in (0, 1)")

    conc = data.get("concentrability", "exact")
    if conc not in ("exact", "sampled"):
        errors.append("concentrability: must be 'exact' or 'sampled'")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        kind=kind,
        garnet=dict(garnet),
        master_seed=seed,
        gamma=float(gamma),
        schemes=list(schemes),
        iterations=iterations,
        n_mdps=n_mdps,
        beta=beta,
        checkpoints=list(checkpoints),
        output_dir=output_dir,
        eval_norm=eval_norm,
        sampled=sampled,
        assumption=assumption,
        delta=float(delta),
        concentrability=conc,
    )


def load_config_data(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    if not text.strip():
        raise ConfigError(
            ["empty config file"] + [f"{key}: required field missing" for key in REQUIRED]
        )
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc


def validate_config(path, overrides: Optional[Dict[str, object]] = None) -> ExperimentConfig:
    data = load_config_data(path)
    if overrides and isinstance(data, dict):
        apply_overrides(data, overrides)
    return config_from_dict(data)


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: Dict[str, object]) -> dict:
    """Set dot-separated fields, e.g. ``{"garnet.n_states": "10"}``; values parse as JSON when possible."""
    for dotted, raw in overrides.items():
        value = _parse_scalar(raw) if isinstance(raw, str) else raw
        target = data
        *parents, leaf = dotted.split(".")
        for name in parents:
            if not isinstance(target.get(name), dict):
                target[name] = {}
            target = target[name]
        target[leaf] = value
    return data


# --------------------------------------------------------------------------
# Runs


@dataclass
class RunRecord:
    """Everything one replicate (one Garnet) produced; ``rows`` are its CSV rows."""

    replicate: int
    garnet_seed: int
    seeds: Dict[str, int]
    columns: List[str]
    rows: List[list]
    wall_time: float = 0.0


PER_MDP_COLUMNS = {
    "convergence": ["replicate", "garnet_seed", "scheme", "scheme_seed", "iteration", "loss"],
    "compare": ["replicate", "garnet_seed", "scheme", "scheme_seed", "iteration", "loss"],
    "assumption": ["replicate", "garnet_seed", "l", "N", "epsbar"],
    "bounds": [
        "replicate", "garnet_seed", "k", "loss_sup", "loss_l1mu", "rhs_sup", "rhs_l1mu",
        "rhs_prop1", "slack_min", "concentrability", "holds_componentwise", "holds_sup",
        "holds_l1mu", "holds_prop1", "sql_dpp_rhs_at_k",
    ],
}


def scheme_seed(master_seed: int, replicate: int, scheme: str) -> int:
    return derive_seed(master_seed, replicate, 1 + SCHEME_IDS.index(scheme))


def run_replicate(config: ExperimentConfig, replicate: int) -> RunRecord:
    start = time.perf_counter()
    garnet_seed = derive_seed(config.master_seed, replicate, 0)
    mdp = generate(config.garnet_spec(garnet_seed), config.gamma)
    seeds = {}
    rows = []
    if config.kind in ("convergence", "compare"):
        q_star = optimal_q(mdp, 1e-12)
        for scheme in config.schemes:
            seed = scheme_seed(config.master_seed, replicate, scheme)
            seeds[scheme] = seed
            run = run_scheme(
                mdp, scheme, config.iterations, config.beta, config.sampled, seed,
                checkpoints=config.checkpoints, q_star=q_star, eval_norm=config.eval_norm,
            )
            for k, value in zip(run.checkpoints, run.losses):
                rows.append([replicate, garnet_seed, scheme, seed, k, value])
    elif config.kind == "assumption":
        params = config.assumption
        seed = derive_seed(config.master_seed, replicate, 1 + SCHEME_IDS.index("movi"))
        seeds["movi"] = seed
        result = assumption_check(
            config.garnet_spec(garnet_seed), config.gamma, params["j"], params["l_values"],
            params["n_max"], seed, config.beta, mdp=mdp,
        )
        for li, l in enumerate(result.l_values):
            for n in range(params["n_max"]):
                rows.append([replicate, garnet_seed, l, n + 1, result.epsbar[li, n]])
    elif config.kind == "bounds":
        rows = _bounds_rows(config, mdp, replicate, garnet_seed, seeds)
    return RunRecord(
        replicate, garnet_seed, seeds, PER_MDP_COLUMNS[config.kind], rows,
        time.perf_counter() - start,
    )


def _bounds_rows(config, mdp, replicate, garnet_seed, seeds):
    seed = scheme_seed(config.master_seed, replicate, "movi")
    seeds["movi"] = seed
    q_star = optimal_q(mdp, 1e-12)
    pi_star = greedy(q_star)
    mu = nu = uniform_distribution(mdp)
    C = concentrability(mdp, mu, nu, mode=config.concentrability, seed=seed)
    run = run_scheme(mdp, "movi", config.iterations, config.beta, config.sampled, seed, ledger=True)
    rows = []
    for k in config.checkpoints:
        report = bound_report(run.ledger, mdp, q_star, pi_star, k, mu, nu, C.value, config.delta)
        rows.append([
            replicate, garnet_seed, k, report.loss_sup, report.loss_l1mu, report.rhs_sup,
            report.rhs_l1mu, report.rhs_prop1, report.slack_min, C.value,
            report.holds_componentwise, report.holds_sup, report.holds_l1mu, report.holds_prop1,
            sql_dpp_bound_rhs(run.ledger, mdp.gamma, mdp.q_max, k + 1),
        ])
    return rows


# --------------------------------------------------------------------------
# Aggregation and figure data


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


def _group(records, key_cols, value_col):
    groups: Dict[tuple, list] = {}
    for rec in records:
        index = {c: i for i, c in enumerate(rec.columns)}
        for row in rec.rows:
            key = tuple(row[index[c]] for c in key_cols)
            groups.setdefault(key, []).append(row[index[value_col]])
    return groups


def aggregate_rows(kind: str, records: List[RunRecord]):
    records = sorted(records, key=lambda r: r.replicate)
    if kind in ("convergence", "compare"):
        header = ["iteration", "scheme", "mean_error", "std_error", "n_mdps"]
        groups = _group(records, ["iteration", "scheme"], "loss")
        schemes = [s for s in SCHEME_IDS if any(k[1] == s for k in groups)]
        keys = sorted(groups, key=lambda k: (k[0], schemes.index(k[1])))
        return header, [[k[0], k[1], *_mean_std(groups[k]), len(groups[k])] for k in keys]
    if kind == "assumption":
        header = ["N", "l", "mean_epsbar", "std_epsbar", "n_mdps"]
        groups = _group(records, ["N", "l"], "epsbar")
        return header, [[k[0], k[1], *_mean_std(groups[k]), len(groups[k])] for k in sorted(groups)]
    if kind == "bounds":
        header = [
            "k", "n_mdps", "violations_componentwise", "violations_sup", "violations_l1mu",
            "violations_prop1", "min_slack", "mean_loss_sup", "mean_rhs_sup", "mean_loss_l1mu",
            "mean_rhs_l1mu", "mean_rhs_prop1",
        ]
        out = []
        ks = sorted({row[2] for rec in records for row in rec.rows})
        for k in ks:
            rows = [row for rec in records for row in rec.rows if row[2] == k]
            col = lambda i: [r[i] for r in rows]
            out.append([
                k, len(rows),
                sum(not r[10] for r in rows), sum(not r[11] for r in rows),
                sum(not r[12] for r in rows), sum(not r[13] for r in rows),
                min(col(8)), np.mean(col(3)), np.mean(col(5)), np.mean(col(4)),
                np.mean(col(6)), np.mean(col(7)),
            ])
        return header, out
    raise ContractError(f"unknown kind {kind!r}")


def emit_figure_data(records: List[RunRecord], figure_id: str, kind: str):
    """Long-format rows for one of the three Garnet figures."""
    if figure_id not in FIGURE_KIND:
        raise ContractError(f"unknown figure {figure_id!r}; expected one of {sorted(FIGURE_KIND)}")
    if FIGURE_KIND[figure_id] != kind:
        raise ContractError(
            f"{figure_id} needs records of kind {FIGURE_KIND[figure_id]!r}, got {kind!r}"
        )
    header, rows = aggregate_rows(kind, records)
    if kind == "assumption":
        return ["N", "l", "mean_epsbar", "std_epsbar"], [r[:4] for r in rows]
    return ["iteration", "scheme", "mean_error", "std_error"], [r[:4] for r in rows]


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) if not isinstance(x, str) else x for x in row])
    return buf.getvalue()


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8", newline="")


def per_mdp_filename(replicate: int) -> str:
    return f"mdp_{replicate:04d}.csv"


def resolve_output_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir)


def run_experiment(config: ExperimentConfig, jobs: int = 1, output_dir=None) -> Dict[str, Path]:
    """Run every replicate, then write per-MDP CSVs, the aggregate and a JSON summary.

    Replicates may run in a process pool; results are always written in
    replicate order, so outputs depend only on the config.
    """
    out = Path(output_dir) if output_dir is not None else resolve_output_dir(config)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc

    indices = list(range(config.n_mdps))
    if jobs > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(run_replicate, [config] * len(indices), indices))
    else:
        records = [run_replicate(config, i) for i in indices]

    written = {}
    for rec in records:
        path = out / per_mdp_filename(rec.replicate)
        _write(path, to_csv(rec.columns, rec.rows))
    header, rows = aggregate_rows(config.kind, records)
    written["aggregate"] = out / "aggregate.csv"
    _write(written["aggregate"], to_csv(header, rows))
    for fig, kind in FIGURE_KIND.items():
        if kind == config.kind:
            h, r = emit_figure_data(records, fig, config.kind)
            written[fig] = out / f"{fig}.csv"
            _write(written[fig], to_csv(h, r))
    summary = {
        "version": __version__,
        "config": config.to_dict(),
        "replicates": [
            {
                "replicate": rec.replicate,
                "garnet_seed": rec.garnet_seed,
                "scheme_seeds": rec.seeds,
                "file": per_mdp_filename(rec.replicate),
            }
            for rec in records
        ],
        "outputs": sorted(p.name for p in written.values()),
    }
    written["summary"] = out / "summary.json"
    _write(written["summary"], json.dumps(summary, indent=2, sort_keys=True) + "\n")
    # Wall-clock time is kept apart so the files above stay byte-reproducible.
    timing = {"replicates": [round(rec.wall_time, 6) for rec in records]}
    written["timing"] = out / "timing.json"
    _write(written["timing"], json.dumps(timing, indent=2) + "\n")
    return written


def _parse_cell(column: str, text: str):
    if column in ("scheme",):
        return text
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    if column in ("replicate", "garnet_seed", "scheme_seed", "iteration", "l", "N", "k"):
        return int(text)
    return float(text)


def load_records(records_dir):
    """Read a finished run back: ``(config, records)``."""
    records_dir = Path(records_dir)
    summary_path = records_dir / "summary.json"
    if not summary_path.exists():
        raise ContractError(f"{records_dir} holds no summary.json")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    config = config_from_dict(summary["config"])
    records = []
    for entry in summary["replicates"]:
        with open(records_dir / entry["file"], newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            columns = next(reader)
            rows = [[_parse_cell(c, x) for c, x in zip(columns, line)] for line in reader]
        records.append(
            RunRecord(entry["replicate"], entry["garnet_seed"], entry["scheme_seeds"], columns, rows)
        )
    return config, records


def emit_from_dir(figure_id: str, records_dir, output=None) -> Path:
    config, records = load_records(records_dir)
    header, rows = emit_figure_data(records, figure_id, config.kind)
    path = Path(output) if output is not None else Path(records_dir) / f"{figure_id}.csv"
    _write(path, to_csv(header, rows))
    return path
