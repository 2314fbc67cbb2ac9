"""Config parsing, run-record persistence, cross-sweep reports and the CLI."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from gaillab import __version__
from gaillab.adversary import (
    DEFAULT_SMOOTHING,
    outlier_threshold,
    reward_shape,
)
from gaillab.errors import (
    ConfigError,
    GailLabError,
    MixedFixtures,
    ParseError,
    RecordIoError,
    ValidationError,
)
from gaillab.fixtures import canonical_mdp, expert_indices, training_config
from gaillab.gradient_lab import (
    EXPLOSION_THRESHOLD,
    central_difference,
    corollary1_estimator,
    explosion_probability,
    js_pair_summand,
    occupancy_gradient,
    occupancy_of_params,
    perturbed_pair_summand,
    relative_error,
    sigma_sweep,
    theorem1_estimator,
)
from gaillab.mdp_core import PolicyTable, TabularMdp, occupancy_measures
from gaillab.policy import (
    GaussianKernelPolicy,
    default_sigma_schedule,
    policy_table_from_gaussian,
)
from gaillab.trainer import (
    TRACE_FIELDS,
    CredoConfig,
    ExperimentConfig,
    ImitatorInit,
    RunRecord,
    TraceRow,
    run_sweep,
    summarize,
)

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2

# --------------------------------------------------------------------------
# config parsing

_TOP_KEYS = {
    "mdp", "expert", "imitator", "mode", "sigma0", "decay", "sigma", "sigma_floor",
    "exploration_noise", "reward_kind", "credo", "discriminator", "iterations",
    "step_size", "batch_size", "seeds", "explosion_threshold", "convergence_tol",
    "disc_refresh",
}
_FLOAT_KEYS = ("sigma0", "decay", "sigma", "sigma_floor", "exploration_noise", "step_size",
               "explosion_threshold", "convergence_tol")
_INT_KEYS = ("iterations", "batch_size", "disc_refresh")


def _number(doc: dict, key: str, path: str, kind=float):
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValidationError(path, f"must be a number, got {type(val).__name__}")
    if kind is int:
        if isinstance(val, float) and not val.is_integer():
            raise ValidationError(path, "must be an integer")
        return int(val)
    return float(val)


def _parse_mdp(spec) -> TabularMdp:
    if spec == "canonical":
        return canonical_mdp()
    if not isinstance(spec, dict):
        raise ValidationError("mdp", "must be 'canonical' or an object")
    spec = dict(spec)
    if "gamma" in spec:
        g = _number(spec, "gamma", "mdp.gamma")
        if not 0.0 <= g < 1.0:
            raise ValidationError("mdp.gamma", "must lie in [0, 1)")
    preset = spec.pop("preset", None)
    if preset is not None:
        if preset != "canonical":
            raise ValidationError("mdp.preset", "only 'canonical' is known")
        extra = set(spec) - {"gamma"}
        if extra:
            raise ValidationError(f"mdp.{sorted(extra)[0]}", "unknown key for a preset")
        return canonical_mdp(**({"gamma": float(spec["gamma"])} if "gamma" in spec else {}))
    extra = set(spec) - {"n_states", "action_grid", "transition", "gamma", "mu0"}
    if extra:
        raise ValidationError(f"mdp.{sorted(extra)[0]}", "unknown key")
    try:
        return TabularMdp.from_dict(spec)
    except (GailLabError, ValueError, TypeError) as exc:
        raise ValidationError("mdp", str(exc)) from exc


def _grid_index(mdp: TabularMdp, point, path: str) -> int:
    p = np.atleast_1d(np.asarray(point, dtype=float))
    hits = np.flatnonzero(np.all(mdp.action_grid == p[None, :], axis=1)) if p.shape == (mdp.action_dim,) else []
    if len(hits) != 1:
        raise ValidationError(path, f"action {point!r} is not a grid point")
    return int(hits[0])


def default_imitator(mdp: TabularMdp, expert: Sequence[int]) -> ImitatorInit:
    """One delta anchor per state on the grid point just below the expert action
    (just above when the expert plays the first grid point)."""
    anchors = []
    for s, i in enumerate(expert):
        j = i - 1 if i > 0 else min(i + 1, mdp.n_actions - 1)
        pt = mdp.action_grid[j]
        anchors.append((s, float(pt[0]) if mdp.action_dim == 1 else tuple(float(x) for x in pt)))
    return ImitatorInit(tuple(anchors))


def _parse_imitator(spec, mdp: TabularMdp, expert) -> ImitatorInit:
    if spec is None:
        return default_imitator(mdp, expert)
    if not isinstance(spec, dict):
        raise ValidationError("imitator", "must be an object")
    extra = set(spec) - {"kernel", "bandwidth", "anchors"}
    if extra:
        raise ValidationError(f"imitator.{sorted(extra)[0]}", "unknown key")
    anchors = spec.get("anchors")
    if not isinstance(anchors, list) or not anchors:
        raise ValidationError("imitator.anchors", "must be a nonempty list of [state, action]")
    out = []
    for k, item in enumerate(anchors):
        if not isinstance(item, list) or len(item) != 2 or isinstance(item[0], bool) \
                or not isinstance(item[0], int):
            raise ValidationError(f"imitator.anchors[{k}]", "must be [state, action]")
        a = item[1]
        if isinstance(a, list):
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in a):
                raise ValidationError(f"imitator.anchors[{k}]", "action coordinates must be numbers")
            a = tuple(float(x) for x in a)
        elif isinstance(a, (int, float)) and not isinstance(a, bool):
            a = float(a)
        else:
            raise ValidationError(f"imitator.anchors[{k}]", "action must be a number or list")
        out.append((item[0], a))
    kernel = spec.get("kernel", "delta")
    if kernel not in ("delta", "rbf"):
        raise ValidationError("imitator.kernel", "must be 'delta' or 'rbf'")
    bw = _number(spec, "bandwidth", "imitator.bandwidth") if "bandwidth" in spec else 1.0
    return ImitatorInit(tuple(out), kernel, bw)


def _parse_credo(spec) -> CredoConfig | None:
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ValidationError("credo", "must be an object or null")
    extra = set(spec) - {"c", "variant"}
    if extra:
        raise ValidationError(f"credo.{sorted(extra)[0]}", "unknown key")
    c = _number(spec, "c", "credo.c") if "c" in spec else CredoConfig.c
    variant = spec.get("variant", "filter")
    if variant not in ("filter", "saturate"):
        raise ValidationError("credo.variant", "must be 'filter' or 'saturate'")
    return CredoConfig(c, variant)


def _parse_discriminator(spec) -> tuple[str, float]:
    if spec in ("exact", "empirical"):
        return spec, DEFAULT_SMOOTHING
    if not isinstance(spec, dict) or spec.get("mode") not in ("exact", "empirical"):
        raise ValidationError("discriminator", "must be 'exact', 'empirical' or {mode, smoothing}")
    extra = set(spec) - {"mode", "smoothing"}
    if extra:
        raise ValidationError(f"discriminator.{sorted(extra)[0]}", "unknown key")
    lam = _number(spec, "smoothing", "discriminator.smoothing") if "smoothing" in spec else DEFAULT_SMOOTHING
    if not lam > 0:
        raise ValidationError("discriminator.smoothing", "must be > 0")
    return spec["mode"], lam


def config_from_dict(doc: Any) -> ExperimentConfig:
    """Validate a decoded JSON document and fill defaults."""
    if not isinstance(doc, dict):
        raise ValidationError("<root>", "config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown key")
    if "mdp" not in doc:
        raise ValidationError("mdp", "is required")
    mdp = _parse_mdp(doc["mdp"])

    if "expert" in doc:
        ex = doc["expert"]
        if not isinstance(ex, list) or len(ex) != mdp.n_states:
            raise ValidationError("expert", f"must list one grid action per state ({mdp.n_states})")
        expert = tuple(_grid_index(mdp, a, f"expert[{s}]") for s, a in enumerate(ex))
    else:
        expert = tuple(int(i) for i in expert_indices(mdp, float(mdp.action_grid[:, 0].max())))

    kw: dict[str, Any] = {}
    for key in _FLOAT_KEYS:
        if key in doc and not (key == "sigma" and doc[key] is None):
            kw[key] = _number(doc, key, key)
    for key in _INT_KEYS:
        if key in doc:
            kw[key] = _number(doc, key, key, int)
    if "mode" in doc:
        if doc["mode"] not in ("DE", "ST"):
            raise ValidationError("mode", "must be 'DE' or 'ST'")
        kw["mode"] = doc["mode"]
    if "reward_kind" in doc:
        try:
            kw["reward_kind"] = reward_shape(str(doc["reward_kind"])).tag
        except KeyError as exc:
            raise ValidationError("reward_kind", str(exc)) from exc
    if "credo" in doc:
        kw["credo"] = _parse_credo(doc["credo"])
    if "discriminator" in doc:
        kw["discriminator"], kw["smoothing"] = _parse_discriminator(doc["discriminator"])
    if "seeds" in doc:
        seeds = doc["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ValidationError("seeds", "must be a nonempty list of integers")
        kw["seeds"] = tuple(seeds)
    imitator = _parse_imitator(doc.get("imitator"), mdp, expert)
    try:
        return ExperimentConfig(mdp, expert, imitator, **kw)
    except ValueError as exc:
        key, _, msg = str(exc).partition(": ")
        raise ValidationError(key, msg or str(exc)) from exc


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    grid = cfg.mdp.action_grid
    point = (lambda i: float(grid[i][0])) if cfg.mdp.action_dim == 1 else (lambda i: grid[i].tolist())
    anchors = [[int(s), list(a) if isinstance(a, tuple) else a] for s, a in cfg.imitator.anchors]
    return {
        "mdp": cfg.mdp.to_dict(),
        "expert": [point(i) for i in cfg.expert_actions],
        "imitator": {"kernel": cfg.imitator.kernel, "bandwidth": cfg.imitator.bandwidth, "anchors": anchors},
        "mode": cfg.mode,
        "sigma0": cfg.sigma0,
        "decay": cfg.decay,
        "sigma": cfg.sigma,
        "sigma_floor": cfg.sigma_floor,
        "exploration_noise": cfg.exploration_noise,
        "reward_kind": cfg.reward_kind,
        "credo": None if cfg.credo is None else {"c": cfg.credo.c, "variant": cfg.credo.variant},
        "discriminator": {"mode": cfg.discriminator, "smoothing": cfg.smoothing},
        "iterations": cfg.iterations,
        "step_size": cfg.step_size,
        "batch_size": cfg.batch_size,
        "seeds": list(cfg.seeds),
        "explosion_threshold": cfg.explosion_threshold,
        "convergence_tol": cfg.convergence_tol,
        "disc_refresh": cfg.disc_refresh,
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=1)


# --------------------------------------------------------------------------
# run records

SUMMARY_FILE = "summary.json"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _csv_name(seed: int) -> str:
    return f"run_{seed}.csv"


def summary_document(records: Sequence[RunRecord], cfg: ExperimentConfig | None) -> dict:
    doc: dict[str, Any] = {"tool_version": __version__}
    if records:
        tol = cfg.convergence_tol if cfg is not None else 0.05
        doc.update(summarize(records, tol).to_dict())
    else:
        doc.update({"n_runs": 0, "divergence_rate": None, "n_converged": 0,
                    "median_iterations_to_convergence": None, "final_js_quartiles": None})
    doc["runs"] = [
        {"seed": r.seed, "diverged": r.diverged, "diverged_at": r.diverged_at, "final_js": r.final_js,
         "converged_at": r.converged_at, "error": r.error, "trace_rows": len(r.trace)}
        for r in records
    ]
    if cfg is not None:
        doc["mdp_fingerprint"] = cfg.mdp.fingerprint()
        doc["config"] = config_to_dict(cfg)
    return doc


def write_run_records(records: Sequence[RunRecord], out_dir, cfg: ExperimentConfig | None = None) -> list[Path]:
    """One ``run_<seed>.csv`` per record plus ``summary.json``; returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = []
        for rec in records:
            path = out / _csv_name(rec.seed)
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(TRACE_FIELDS)
                for row in rec.trace:
                    w.writerow([_fmt(v) for v in row.as_tuple()])
            manifest.append(path)
        path = out / SUMMARY_FILE
        path.write_text(json.dumps(summary_document(records, cfg), indent=1, sort_keys=True) + "\n")
        manifest.append(path)
    except OSError as exc:
        raise RecordIoError(exc.strerror or "cannot write", exc.filename or out) from exc
    return manifest


def _read_trace(path: Path) -> tuple:
    if not path.exists():
        raise RecordIoError("missing run file", path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_FIELDS:
        raise RecordIoError("unexpected CSV header", path)
    out = []
    for raw in rows[1:]:
        it, sigma, norm, js, p, clamps, dropped = raw
        out.append(TraceRow(int(it), float(sigma), float(norm), float(js), float(p), int(clamps), int(dropped)))
    return tuple(out)


def read_run_records(out_dir) -> tuple[list[RunRecord], dict]:
    out = Path(out_dir)
    spath = out / SUMMARY_FILE
    if not spath.exists():
        raise RecordIoError("missing summary", spath)
    summary = json.loads(spath.read_text())
    records = []
    for run in summary.get("runs", []):
        trace = _read_trace(out / _csv_name(run["seed"]))
        records.append(RunRecord(run["seed"], trace, run["diverged"], run["diverged_at"], run["final_js"],
                                 run["converged_at"], run["error"]))
    return records, summary


# --------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class ReportBundle:
    rows: list                # one dict per sweep
    comparison: list          # deltas against the first sweep
    long_rows: list           # plot-ready (sweep, seed, iteration, metric, value)

    def long_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("sweep", "seed", "iteration", "metric", "value"))
            for r in self.long_rows:
                w.writerow([r[0], r[1], r[2], r[3], _fmt(r[4])])
        return path


def report(run_dirs: Sequence) -> ReportBundle:
    """Compare sweeps on the same MDP; rates are recomputed from the run files."""
    if not run_dirs:
        raise ValueError("no run directories")
    loaded = []
    for d in run_dirs:
        records, summary = read_run_records(d)
        loaded.append((Path(d), records, summary))
    prints = {s.get("mdp_fingerprint") for _, _, s in loaded}
    if len(prints) > 1:
        raise MixedFixtures(f"sweeps were run on different MDPs: {sorted(map(str, prints))}")

    rows, long_rows = [], []
    for path, records, summary in loaded:
        cfg = summary.get("config") or {}
        tol = cfg.get("convergence_tol", 0.05)
        threshold = cfg.get("explosion_threshold", EXPLOSION_THRESHOLD)
        diverged = [any(not math.isfinite(r.grad_norm) or r.grad_norm > threshold for r in rec.trace)
                    for rec in records]
        conv = [rec.converged_at for rec, dv in zip(records, diverged)
                if not dv and rec.final_js < tol]
        credo = cfg.get("credo")
        rows.append({
            "sweep": path.name,
            "mode": cfg.get("mode"),
            "credo": None if credo is None else f"{credo['variant']}(c={credo['c']})",
            "n_runs": len(records),
            "divergence_rate": (sum(diverged) / len(records)) if records else None,
            "n_converged": len(conv),
            "median_iterations_to_convergence": float(np.median(conv)) if conv else None,
        })
        for rec in records:
            for tr in rec.trace:
                for metric in TRACE_FIELDS[1:]:
                    long_rows.append((path.name, rec.seed, tr.iteration, metric, getattr(tr, metric)))

    base = rows[0]
    comparison = []
    for row in rows[1:]:
        delta = None
        if base["divergence_rate"] is not None and row["divergence_rate"] is not None:
            delta = base["divergence_rate"] - row["divergence_rate"]
        ratio = None
        if base["median_iterations_to_convergence"] and row["median_iterations_to_convergence"]:
            ratio = row["median_iterations_to_convergence"] / base["median_iterations_to_convergence"]
        comparison.append({"baseline": base["sweep"], "sweep": row["sweep"],
                           "delta_divergence_rate": delta, "iterations_ratio": ratio})
    return ReportBundle(rows, comparison, long_rows)


# --------------------------------------------------------------------------
# CLI

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _pair(text: str) -> tuple[int, int]:
    try:
        s, a = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pair must be 's,a', got {text!r}") from None
    return s, a


def _load_mdp(arg: str) -> TabularMdp:
    if arg == "canonical":
        return canonical_mdp()
    return _parse_mdp(json.loads(Path(arg).read_text()))


def _imitator_policy(mdp: TabularMdp, args) -> GaussianKernelPolicy:
    return GaussianKernelPolicy.per_state(np.full(mdp.n_states, args.anchor), args.sigma)


def _expert(mdp: TabularMdp, args) -> PolicyTable:
    idx = expert_indices(mdp, args.expert_action)
    return PolicyTable.deterministic(idx, mdp.n_actions)


def _emit(obj, as_json: bool, out=None) -> None:
    out = out or sys.stdout
    if as_json:
        out.write(json.dumps(obj, indent=1, default=float) + "\n")
        return
    for k, v in obj.items():
        out.write(f"{k}: {v}\n")


def _cmd_solve_occupancy(args) -> dict:
    mdp = _load_mdp(args.mdp)
    if args.policy:
        doc = json.loads(Path(args.policy).read_text())
        table = PolicyTable(doc["probs"]) if "probs" in doc else policy_table_from_gaussian(
            GaussianKernelPolicy.from_anchors([tuple(a) for a in doc["anchors"]], doc["sigma"],
                                              doc.get("kernel", "delta"), doc.get("bandwidth", 1.0)), mdp)
    else:
        table = policy_table_from_gaussian(_imitator_policy(mdp, args), mdp)
    occ = occupancy_measures(mdp, table)
    return {"rho": occ.table(mdp.n_actions).tolist(), "d": occ.d.tolist(), "total": float(occ.rho.sum())}


def _cmd_grad_check(args) -> dict:
    mdp = _load_mdp(args.mdp)
    pol = _imitator_policy(mdp, args)
    rho_e = occupancy_measures(mdp, _expert(mdp, args))
    s, a = args.pair
    sa = s * mdp.n_actions + a
    jac = occupancy_gradient(mdp, pol)
    occ_fn = occupancy_of_params(mdp, pol)
    theta = pol.anchor_actions.ravel()
    fd_jac = central_difference(occ_fn, theta, args.step)
    t1 = theorem1_estimator(mdp, pol, rho_e, (s, a), jac=jac)
    fd_t1 = 0.5 * central_difference(lambda th: js_pair_summand(occ_fn(th)[sa], rho_e.rho[sa]), theta, args.step)
    c1 = corollary1_estimator(mdp, pol, rho_e, args.eps1, args.eps2, (s, a), jac=jac)
    fd_c1 = central_difference(
        lambda th: perturbed_pair_summand(occ_fn(th)[sa], rho_e.rho[sa], args.eps1, args.eps2), theta, args.step)
    return {
        "jacobian_rel_err": relative_error(jac.upsilon, fd_jac),
        "theorem1_rel_err": relative_error(t1.estimator_value, fd_t1),
        "corollary1_rel_err": relative_error(c1.estimator_value, fd_c1),
        "theorem1_norm": t1.norm,
        "corollary1_norm": c1.norm,
    }


def _cmd_sweep_sigma(args) -> dict:
    mdp = _load_mdp(args.mdp)
    rho_e = occupancy_measures(mdp, _expert(mdp, args))
    schedule = args.schedule or default_sigma_schedule()
    rows = sigma_sweep(mdp, rho_e, _imitator_policy(mdp, args), schedule, args.pair,
                       explosion_threshold=args.threshold)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("sigma", "grad_norm", "disparity_ratio", "exploded"))
            for r in rows:
                w.writerow((_fmt(r.sigma), _fmt(r.grad_norm), _fmt(r.disparity_ratio), int(r.exploded)))
    return {"rows": [r.__dict__ for r in rows]}


def _cmd_explosion_prob(args) -> dict:
    mdp = _load_mdp(args.mdp)
    expert = _expert(mdp, args)
    pol = _imitator_policy(mdp, args)
    rng = np.random.default_rng(args.seed)
    out = []
    for C in args.C:
        ep = explosion_probability(pol, expert, mdp, C, args.n, rng, exploration_noise=args.noise)
        out.append({"C": C, **ep.__dict__})
    return {"rows": out}


def _cmd_thresholds(args) -> dict:
    iv = outlier_threshold(args.reward, args.c, closed_form=not args.bisect)
    return {"reward_kind": iv.reward_kind, "c": iv.c, "d_star": iv.d_star, "empty": iv.empty,
            "closed_form": iv.closed_form}


def _cmd_run(args) -> dict:
    cfg = parse_config(Path(args.config).read_text())
    if args.seed_list:
        cfg = cfg.with_(seeds=tuple(args.seed_list))
    records, summary = run_sweep(cfg)
    manifest = write_run_records(records, args.out, cfg)
    return {**summary.to_dict(), "files": [str(p) for p in manifest]}


def _cmd_report(args) -> dict:
    bundle = report(args.dirs)
    if args.out:
        bundle.long_csv(args.out)
    return {"sweeps": bundle.rows, "comparison": bundle.comparison}


def _cmd_example_config(args) -> dict:
    cfg = training_config(args.mode, credo=args.credo)
    return config_to_dict(cfg)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gaillab", description="Tabular GAIL gradient-explosion laboratory.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, anchor=-1.0, sigma=0.5):
        sp.add_argument("--mdp", default="canonical", help="'canonical' or an MDP JSON file")
        sp.add_argument("--anchor", type=float, default=anchor, help="imitator mean in every state")
        sp.add_argument("--sigma", type=float, default=sigma)
        sp.add_argument("--expert-action", type=float, default=1.0)
        sp.add_argument("--json", action="store_true")

    sp = sub.add_parser("solve-occupancy", help="exact occupancy of a policy")
    common(sp)
    sp.add_argument("--policy", help="JSON with 'probs' or a Gaussian spec (sigma, anchors)")
    sp.set_defaults(fn=_cmd_solve_occupancy)

    sp = sub.add_parser("grad-check", help="analytic gradients against central differences")
    common(sp)
    sp.add_argument("--pair", type=_pair, default=(0, 4))
    sp.add_argument("--eps1", type=float, default=0.3)
    sp.add_argument("--eps2", type=float, default=-0.2)
    sp.add_argument("--step", type=float, default=1e-6)
    sp.set_defaults(fn=_cmd_grad_check)

    sp = sub.add_parser("sweep-sigma", help="JS-gradient norm along a decreasing sigma schedule")
    common(sp, anchor=0.75)
    sp.add_argument("--pair", type=_pair, default=(0, 4))
    sp.add_argument("--schedule", type=_float_list)
    sp.add_argument("--threshold", type=float, default=EXPLOSION_THRESHOLD)
    sp.add_argument("--out", help="write the rows as CSV")
    sp.set_defaults(fn=_cmd_sweep_sigma)

    sp = sub.add_parser("explosion-prob", help="Monte-Carlo frequency of the disparity events")
    common(sp)
    sp.add_argument("--C", type=_float_list, default=[1.0])
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=None, help="exploration noise std")
    sp.set_defaults(fn=_cmd_explosion_prob)

    sp = sub.add_parser("thresholds", help="outlier interval of a reward shape")
    sp.add_argument("--reward", default="r1")
    sp.add_argument("--c", type=float, default=5.0)
    sp.add_argument("--bisect", action="store_true", help="force root finding")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=_cmd_thresholds)

    sp = sub.add_parser("run", help="training sweep from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed-list", type=_seed_list)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=_cmd_run)

    sp = sub.add_parser("report", help="compare sweeps written by 'run'")
    sp.add_argument("dirs", nargs="+")
    sp.add_argument("--out", help="plot-ready long CSV")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=_cmd_report)

    sp = sub.add_parser("example-config", help="print the canonical training config")
    sp.add_argument("--mode", choices=("DE", "ST"), default="DE")
    sp.add_argument("--credo", action="store_true")
    sp.set_defaults(fn=_cmd_example_config, json=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        result = args.fn(args)
    except ConfigError as exc:
        sys.stderr.write(f"validation error: {exc}\n")
        return EXIT_VALIDATION
    except (GailLabError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME
    _emit(result, args.json)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
