"""``aware`` command line: run scenarios, predict, search and count.

Exit codes: 0 success, 2 invalid input, 3 invariant violation during a run,
4 exhaustive search over budget.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .model import count_configurations, derive_shape, enumerate_configurations, make_config, parse_config
from .monitoring import format_latency, parse_latency
from .optimizer import DEFAULT_BUDGET, BudgetExceeded, SaParams, search
from .predictor import DEFAULT_ROUNDS, LatencyModel
from .protocol import InvariantViolation
from .simnet import ScenarioError, load_fixture, load_scenario, sim_threads, trimmed_mean
from .simnet import run as run_scenario

EXIT_INVALID = 2
EXIT_INVARIANT = 3
EXIT_BUDGET = 4


class InputError(Exception):
    pass


def load_matrix(path: str):
    """Read an n x n ms matrix from JSON, CSV (label header row) or a fixture name."""
    p = Path(path)
    labels = None
    if not p.exists():
        try:
            fx = load_fixture(path)
        except ScenarioError:
            raise InputError(f"no such matrix file or fixture: {path}") from None
        return np.asarray(fx["matrix_ms"], dtype=float), fx.get("labels")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() == ".csv":
            rows = [r for r in csv.reader(io.StringIO(text)) if r]
            labels, rows = rows[0], rows[1:]
            data = [[parse_latency(x) for x in r] for r in rows]
        else:
            obj = json.loads(text)
            if isinstance(obj, dict):
                labels = obj.get("labels")
                obj = obj["matrix_ms"]
            data = [[parse_latency(x) for x in r] for r in obj]
        m = np.asarray(data, dtype=float)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse matrix {path}: {exc}") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"matrix in {path} is not square: {m.shape}")
    if labels is not None and len(labels) != m.shape[0]:
        raise InputError(f"{len(labels)} labels for a {m.shape[0]}x{m.shape[0]} matrix")
    return m, labels


def _shape_and_matrices(args):
    if args.f < 1 or args.delta < 0:
        raise InputError("need f >= 1 and delta >= 0")
    shape = derive_shape(args.f, args.delta)
    m_w, labels = load_matrix(args.matrix)
    m_p = load_matrix(args.propose_matrix)[0] if args.propose_matrix else m_w
    for name, m in (("matrix", m_w), ("propose matrix", m_p)):
        if m.shape != (shape.n, shape.n):
            raise InputError(f"{name} is {m.shape[0]}x{m.shape[1]} but f={args.f}, delta={args.delta} needs n={shape.n}")
        if np.any(m < 0) or np.any(np.isnan(m)):
            raise InputError(f"{name} has negative or missing entries")
    return shape, m_p, m_w, labels


def _config(shape, text):
    try:
        return parse_config(shape, text)
    except ValueError as exc:
        raise InputError(f"bad config {text!r}: {exc}") from exc


def _fmt(x: float) -> str:
    return format_latency(round(x, 6)) if math.isfinite(x) else "inf"


# -- predict / search / count ------------------------------------------------------


def cmd_predict(args, out) -> int:
    shape, m_p, m_w, labels = _shape_and_matrices(args)
    model = LatencyModel(shape, m_p, m_w)
    if args.all:
        configs = enumerate_configurations(shape)
        threads = sim_threads()
        chunks = [configs[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: (c, model.predict_many_ns(c, args.rounds)), chunks))
        rows = [(int(t), c) for cs, ts in parts for c, t in zip(cs, ts)]
        order = {c: k for k, c in enumerate(configs)}
        rows.sort(key=lambda r: (r[0], order[r[1]]))
        print("rank\tconfig\tpredicted_ms", file=out)
        for k, (total, c) in enumerate(rows, 1):
            print(f"{k}\t{c.label()}\t{_fmt(total / args.rounds / 1e6 if total < (1 << 60) else math.inf)}", file=out)
        return 0
    cfg = _config(shape, args.config) if args.config else make_config(shape, 0, range(shape.u))
    print(f"config {cfg.label()}", file=out)
    print(f"predicted_ms {_fmt(model.predict(cfg, args.rounds))}", file=out)
    st = model.stage_times(cfg)
    names = labels or [str(i) for i in range(shape.n)]
    print("replica\tproposed_ms\twritten_ms\taccepted_ms", file=out)
    for i in range(shape.n):
        print(f"{names[i]}\t{_fmt(st.proposed[i])}\t{_fmt(st.written[i])}\t{_fmt(st.accepted[i])}", file=out)
    return 0


def cmd_search(args, out) -> int:
    shape, m_p, m_w, _ = _shape_and_matrices(args)
    start = _config(shape, args.start) if args.start else make_config(shape, 0, range(shape.u))
    try:
        sa = SaParams(args.t0, args.theta, args.threshold)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    try:
        best = search(shape, m_p, m_w, start, seed=args.seed, strategy=args.strategy,
                      rounds=args.rounds, params=sa, budget=args.budget)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    print(f"best {best.config.label()}", file=out)
    print(f"predicted_ms {_fmt(best.predicted)}", file=out)
    print(f"probed {best.probes}", file=out)
    return 0


def cmd_count(args, out) -> int:
    if args.f < 1 or args.delta < 0:
        raise InputError("need f >= 1 and delta >= 0")
    print(count_configurations(derive_shape(args.f, args.delta)), file=out)
    return 0


# -- run ----------------------------------------------------------------------------


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def config_predictions(log) -> dict[str, float]:
    """First finite prediction AWARE made for each configuration."""
    out = {}
    for rec in log.calcs:
        for cand in (rec.current, rec.best):
            label = cand.config.label()
            if label not in out and math.isfinite(cand.predicted):
                out[label] = cand.predicted
    return out


def per_config_stats(log):
    """label -> (mean measured consensus ms, client trimmed mean ms, instances)."""
    periods = log.config_periods()
    stats = {}
    for label in dict.fromkeys(p[0] for p in periods):
        lat = [r.latency_ms for r in log.instances if r.config == label and math.isfinite(r.latency_ms)]
        spans = [(a, b) for lab, a, b in periods if lab == label]
        client = [r.latency_ms for r in log.clients if any(a <= r.send_ms <= b for a, b in spans)]
        stats[label] = (float(np.mean(lat)) if lat else math.nan,
                        trimmed_mean(client) if client else math.nan, len(lat))
    return stats


def pearson(xs, ys) -> float:
    return float(np.corrcoef(np.asarray(xs, float), np.asarray(ys, float))[0, 1])


def summarize(log, scenario) -> str:
    labels = scenario.labels
    lines = [f"scenario: {scenario.name or '-'}  seed: {scenario.seed}  simulated: {log.end_ms / 1000:.1f} s",
             f"instances decided: {len(log.instances)}  client requests: {len(log.clients)}", ""]
    def name(c):
        return f"client {c} ({labels[log_attach(scenario, c)]})"

    lines.append("client trimmed means (11th-90th percentile), ms")
    for c, v in log.trimmed_means().items():
        lines.append(f"  {name(c)}: {v:.3f}")
    recon = [e for e in log.events if e.kind in ("reconfigure", "leader_change")]
    marks = [0.0] + [e.time_ms for e in log.events] + [log.end_ms]
    if recon:
        lines += ["", "reconfigurations"]
        for e in recon:
            k = marks.index(e.time_ms)
            before = log.trimmed_means(marks[k - 1], marks[k])
            after = log.trimmed_means(marks[k], marks[k + 1])
            lines.append(f"  {e.detail}")
            for c in sorted(set(before) & set(after)):
                lines.append(f"    {name(c)}: {before[c]:.3f} -> {after[c]:.3f}")
    other = [e for e in log.events if e.kind not in ("reconfigure", "leader_change")]
    if other:
        lines += ["", "events"]
        lines += [f"  {e.time_ms:.3f} ms {e.kind} {e.detail}" for e in other]
    preds = config_predictions(log)
    stats = per_config_stats(log)
    lines += ["", "per config: predicted vs measured consensus, client trimmed mean (ms)"]
    pairs = []
    for label, (measured, client, count) in stats.items():
        pred = preds.get(label, math.nan)
        lines.append(f"  {label}: predicted {_fmt(pred)}  measured {_fmt(measured)}  "
                     f"clients {_fmt(client)}  instances {count}")
        if math.isfinite(pred) and math.isfinite(client):
            pairs.append((pred, client))
    if len(pairs) >= 3:
        rho = pearson([p for p, _ in pairs], [c for _, c in pairs])
        lines.append(f"rho(predicted, client) = {rho:.4f} over {len(pairs)} configs")
    return "\n".join(lines) + "\n"


def log_attach(scenario, client_id: int) -> int:
    k = client_id - scenario.shape.n
    for spec in scenario.clients:
        if k < spec.count:
            return spec.attach
        k -= spec.count
    raise KeyError(client_id)


def cmd_run(args, out) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        raise InputError(str(exc)) from exc
    if args.seed is not None:
        scenario.seed = args.seed
    log = run_scenario(scenario)
    files = {
        "instances.csv": _csv_text(
            ["cid", "decide_time_ms", "leader", "config", "latency_ms"],
            [(r.cid, _fmt(r.decide_time_ms), r.leader, r.config, _fmt(r.latency_ms)) for r in log.instances]),
        "clients.csv": _csv_text(
            ["client", "req_id", "latency_ms"],
            [(r.client, r.req_id, _fmt(r.latency_ms)) for r in log.clients]),
        "events.csv": _csv_text(
            ["time", "kind", "detail"],
            [(_fmt(e.time_ms), e.kind, e.detail) for e in log.events]),
        "summary.txt": summarize(log, scenario),
    }
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for fname, text in files.items():
        (outdir / fname).write_text(text, encoding="utf-8")
    out.write(files["summary.txt"])
    return 0


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aware", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulated scenario")
    r.add_argument("scenario")
    r.add_argument("--out", default="out")
    r.add_argument("--seed", type=int)

    def matrix_args(sp):
        sp.add_argument("matrix", help="JSON or CSV matrix in ms, or a fixture name")
        sp.add_argument("--f", type=int, required=True)
        sp.add_argument("--delta", type=int, required=True)
        sp.add_argument("--propose-matrix", help="separate PROPOSE latencies (default: same matrix)")
        sp.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS)

    pr = sub.add_parser("predict", help="predict consensus latency of a configuration")
    matrix_args(pr)
    g = pr.add_mutually_exclusive_group()
    g.add_argument("--config", help='"leader:a,b,..."')
    g.add_argument("--all", action="store_true", help="rank every configuration")

    s = sub.add_parser("search", help="find the fastest configuration")
    matrix_args(s)
    s.add_argument("--strategy", choices=["auto", "exhaustive", "annealing"], default="auto")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--start", help="annealing start config, default leader 0 with r_max 0..2f-1")
    s.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    s.add_argument("--t0", type=float, default=SaParams.t0)
    s.add_argument("--theta", type=float, default=SaParams.theta)
    s.add_argument("--threshold", type=float, default=SaParams.threshold)

    c = sub.add_parser("count", help="number of (leader, weight) configurations")
    c.add_argument("--f", type=int, required=True)
    c.add_argument("--delta", type=int, required=True)
    return p


COMMANDS = {"run": cmd_run, "predict": cmd_predict, "search": cmd_search, "count": cmd_count}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else 0
    if getattr(args, "rounds", 1) < 1:
        print("error: --rounds must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args, out)
    except (InputError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantViolation as exc:
        print(f"invariant violated: {exc.invariant}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
