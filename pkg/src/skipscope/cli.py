"""Command-line entry point.

Subcommands: analyze (traces -> profiles + figures), plan (profiles ->
skip plan), verify (theorem oracle suites), simulate (toy model), pid
(triple pmf -> decomposition), info-bounds (trace -> bound report).

Exit codes: 0 success, 1 usage error, 2 input format error,
3 verification failure. File outputs are written atomically
(temp-then-rename) and are byte-identical across identical invocations;
JSON is the canonical machine output and CSV mirrors it. The
SKIPSCOPE_SEED environment variable overrides default seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attention as attention_mod
from . import figures, infotheory, oracle, pid, planner, redundancy, toymodel
from .errors import (
    DomainViolation,
    EmptyModality,
    FormatRejected,
    InvalidArgument,
    MissingMetric,
    MissingQuery,
    ShapeMismatch,
    SkipscopeError,
    SolverStalled,
    TraceIoError,
    ValidationFailed,
)
from .traceio import read_trace_file, write_trace_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_VERIFY = 3

_INPUT_ERRORS = (
    FormatRejected,
    TraceIoError,
    ValidationFailed,
    EmptyModality,
    MissingQuery,
    ShapeMismatch,
    MissingMetric,
    DomainViolation,
    SolverStalled,
)

DEFAULT_SEED = 0


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _env_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("SKIPSCOPE_SEED")
    return int(env) if env else DEFAULT_SEED


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write_atomic(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data)
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


def _emit_error(exc: Exception) -> None:
    code = exc.code if isinstance(exc, SkipscopeError) else "ERROR"
    line = json.dumps({"error": code, "message": str(exc)}, sort_keys=True)
    print(line, file=sys.stderr)


def _load_traces(paths):
    loaded = []
    for p in paths:
        try:
            loaded.append(read_trace_file(p) + (p,))
        except FileNotFoundError as exc:
            raise TraceIoError(f"cannot open trace {p}: {exc}") from exc
    return loaded


def _pooled_var(loaded, query_token=None):
    profiles = []
    for trace, attn, path in loaded:
        if attn is None or "V" not in attn.vision_key_mask:
            continue
        q = query_token
        if q is None:
            q = trace.answer_token_index if trace.answer_token_index is not None else attn.query_token_ids[0]
        profiles.append(attention_mod.var_profile(attn, q))
    return attention_mod.mean_var_profile(profiles) if profiles else None


def _cmd_analyze(args) -> int:
    out = Path(args.out_dir)
    formats = _parse_formats(args.formats)
    loaded = _load_traces(args.trace)
    profile = redundancy.redundancy_profile([t for t, _, _ in loaded], t=args.t)
    var = _pooled_var(loaded, args.query_token)

    if "csv" in formats:
        _write_atomic(out / "profile.csv", profile.to_csv())
        if var is not None:
            _write_atomic(out / "var.csv", var.to_csv())
    if "json" in formats:
        payload = {
            "t": args.t,
            "n_traces": len(loaded),
            "profile": profile.to_records(),
            "var": None if var is None else var.to_records(),
        }
        _write_atomic(out / "analysis.json", _dump_json(payload))
    if "svg" in formats:
        _render_atomic(out / "redundancy.svg", figures.save_redundancy_figure, profile)
        if var is not None:
            _render_atomic(out / "var.svg", figures.save_var_figure, var)
    print(f"analyzed {len(loaded)} trace(s) -> {out}")
    return EXIT_OK


def _render_atomic(path: Path, render, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    render(obj, tmp)
    os.replace(tmp, path)


def _parse_formats(spec: str):
    formats = tuple(f.strip() for f in spec.split(",") if f.strip())
    bad = [f for f in formats if f not in ("csv", "json", "svg")]
    if bad:
        raise InvalidArgument(f"unknown report formats {bad}; expected csv, json, svg")
    return formats


def _cmd_plan(args) -> int:
    out = Path(args.out_dir)
    thresholds = planner.Thresholds(eps_geo=args.eps_geo, eps_prox=args.eps_prox, tau_var=args.tau_var, t=args.t)
    if args.trace:
        loaded = _load_traces(args.trace)
        profile = redundancy.redundancy_profile([t for t, _, _ in loaded], t=args.t)
        var = _pooled_var(loaded)
        if var is None:
            raise FormatRejected("planning from traces requires stored attention rows")
    elif args.profile:
        profile_text = Path(args.profile).read_text()
        var_text = Path(args.var).read_text() if args.var else None
        profile, var = planner.load_external_metrics(profile_text, var_text)
        if var is None:
            raise FormatRejected("planning requires a VAR CSV alongside the profile CSV")
    else:
        raise _UsageError("plan needs either --trace or --profile")
    conditions = planner.evaluate_conditions(profile, var, thresholds)
    modality = planner.MODALITY_BY_NAME[args.modality.upper()]
    plan = planner.plan_skips(conditions, modality)
    _write_atomic(out / "plan.json", _dump_json(plan.to_dict()))
    _write_atomic(out / "rationale.csv", plan.rationale_csv())
    print(
        f"late_entry_layer={plan.late_entry_layer} "
        f"early_exit_layer={plan.early_exit_layer} -> {out}"
    )
    return EXIT_OK


def _cmd_verify(args) -> int:
    seed = _env_seed(args.seed)
    names = list(oracle.THEOREMS) + ["lemmas"] if args.theorem == "all" else [args.theorem]
    fixture_dir = Path(args.out_dir) if args.out_dir else None
    summaries = []
    for name in names:
        if name == "lemmas":
            for lemma in oracle.LEMMAS:
                summaries.append(oracle.run_lemma_suite(lemma, args.instances, seed))
        else:
            summaries.append(oracle.run_suite(name, args.instances, seed, fixture_dir=fixture_dir))
    payload = [s.to_dict() for s in summaries]
    text = _dump_json(payload)
    sys.stdout.write(text)
    if fixture_dir is not None:
        _write_atomic(fixture_dir / "verify.json", text)
    failed = sum(s.substantive_failures for s in summaries)
    return EXIT_VERIFY if failed else EXIT_OK


def _cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    seed = _env_seed(args.seed)
    block = tuple(int(x) for x in args.copy_block.split(","))
    if len(block) != 2:
        raise _UsageError("--copy-block expects 'a,b'")
    config = toymodel.ToyModelConfig(
        layer_count=args.layers,
        dim=args.dim,
        head_count=args.heads,
        copy_block=block,
        noise_scale=args.noise,
        seed=seed,
    )
    model = toymodel.build_model(config)
    dataset = toymodel.synth_dataset(seed, args.samples)
    if args.mode == "baseline":
        mode = toymodel.BASELINE
    elif args.mode == "late-entry":
        if args.entry is None:
            raise _UsageError("--mode late-entry requires --entry")
        mode = toymodel.late_entry(args.entry)
    else:
        if args.exit is None:
            raise _UsageError("--mode early-exit requires --exit")
        mode = toymodel.early_exit(args.exit)

    accuracy = toymodel.evaluate_accuracy(model, dataset, mode)
    result = toymodel.forward_batch(model, dataset[: args.emit_traces], mode)
    trace_files = []
    for i in range(min(args.emit_traces, len(dataset))):
        trace, attn = toymodel.result_to_traces(model, result, i, sample_id=f"toy-{seed}-{i}-{mode.describe()}")
        path = out / f"sim_trace_{i:03d}.vlmt"
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        write_trace_file(tmp, trace, attn)
        os.replace(tmp, path)
        trace_files.append(path.name)
    payload = {
        "mode": mode.describe(),
        "accuracy": accuracy,
        "samples": len(dataset),
        "seed": seed,
        "layers": args.layers,
        "copy_block": list(block),
        "trace_files": trace_files,
    }
    _write_atomic(out / "accuracy.json", _dump_json(payload))
    print(f"{mode.describe()} accuracy={accuracy:.4f} -> {out}")
    return EXIT_OK


def _cmd_pid(args) -> int:
    try:
        raw = json.loads(Path(args.pmf).read_text())
    except FileNotFoundError as exc:
        raise TraceIoError(f"cannot open pmf file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatRejected(f"pmf file is not valid JSON: {exc}") from exc
    pmf = raw.get("pmf") if isinstance(raw, dict) else raw
    try:
        joint = pid.TripleJoint(np.asarray(pmf, dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise FormatRejected(f"pmf is not a numeric 3-d array: {exc}") from exc
    result = pid.pid_decompose(joint)
    payload = {
        "uni_xy": result.uni_xy,
        "uni_xz": result.uni_xz,
        "red": result.red,
        "syn": result.syn,
        "solver_gap": result.solver_gap,
        "mi_xy": result.mi_xy,
        "mi_xz": result.mi_xz,
        "mi_x_yz": result.mi_x_yz,
    }
    text = _dump_json(payload)
    sys.stdout.write(text)
    if args.out:
        _write_atomic(Path(args.out), text)
    return EXIT_OK


_BOUND_COLUMNS = (
    "layer",
    "modality",
    "k",
    "t",
    "P_t",
    "H_cond_bits",
    "I_bits",
    "fano_upper_bits",
    "mi_lower_bits",
    "applicable_fano",
    "applicable_mi",
)


def _cmd_info_bounds(args) -> int:
    out = Path(args.out_dir)
    seed = _env_seed(args.seed)
    loaded = _load_traces([args.trace])
    trace = loaded[0][0]
    modalities = ["V", "T"] if args.modality == "both" else [planner.MODALITY_BY_NAME[args.modality.upper()]]
    layers = range(1, trace.layer_count) if args.layer is None else [args.layer]
    rows = []
    records = []
    for modality in modalities:
        if len(trace.token_indices(modality)) == 0:
            continue
        for layer in layers:
            report = infotheory.layer_bound_report(trace, layer, modality, k=args.k, t=args.t, seed=seed)
            name = "VISION" if modality == "V" else "TEXT"
            rows.append(
                [
                    layer,
                    name,
                    report.k,
                    repr(report.t),
                    repr(report.P_t),
                    repr(report.H_cond),
                    repr(report.I_exact),
                    repr(report.fano_upper),
                    repr(report.mi_lower),
                    "true" if report.applicable_fano else "false",
                    "true" if report.applicable_mi else "false",
                ]
            )
            records.append(
                {
                    "layer": layer,
                    "modality": name,
                    "k": report.k,
                    "t": report.t,
                    "P_t": report.P_t,
                    "H_cond_bits": report.H_cond,
                    "I_bits": report.I_exact,
                    "fano_upper_bits": report.fano_upper,
                    "mi_lower_bits": report.mi_lower,
                    "applicable_fano": report.applicable_fano,
                    "applicable_mi": report.applicable_mi,
                    "warnings": list(report.warnings),
                }
            )
    lines = [",".join(_BOUND_COLUMNS)]
    lines += [",".join(str(c) for c in row) for row in rows]
    _write_atomic(out / "bounds.csv", "\n".join(lines) + "\n")
    _write_atomic(out / "bounds.json", _dump_json(records))
    print(f"info-bounds wrote {len(rows)} row(s) -> {out}")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="skipscope", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="compute redundancy and VAR profiles from traces")
    p.add_argument("--trace", action="append", required=True, help="trace file (repeatable)")
    p.add_argument("--t", type=float, default=redundancy.DEFAULT_THRESHOLD)
    p.add_argument("--query-token", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--formats", default="csv,json,svg")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("plan", help="evaluate skip conditions and emit a plan")
    p.add_argument("--trace", action="append", default=[])
    p.add_argument("--profile", default=None, help="profile CSV path")
    p.add_argument("--var", default=None, help="VAR CSV path")
    p.add_argument("--eps-geo", type=float, default=0.03)
    p.add_argument("--eps-prox", type=float, default=0.10)
    p.add_argument("--tau-var", type=float, default=0.05)
    p.add_argument("--t", type=float, default=redundancy.DEFAULT_THRESHOLD)
    p.add_argument("--modality", default="VISION", choices=["VISION", "TEXT", "vision", "text"])
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("verify", help="run theorem-oracle suites")
    p.add_argument("--theorem", default="all", choices=list(oracle.THEOREMS) + ["lemmas", "all"])
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None, help="where to write verify.json and failure fixtures")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("simulate", help="run the toy model under a skip mode")
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--copy-block", default="5,8")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--mode", default="baseline", choices=["baseline", "late-entry", "early-exit"])
    p.add_argument("--entry", type=int, default=None)
    p.add_argument("--exit", type=int, default=None)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--emit-traces", type=int, default=4)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("pid", help="decompose a JSON triple pmf")
    p.add_argument("--pmf", required=True, help="JSON file with a 3-d pmf")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_pid)

    p = sub.add_parser("info-bounds", help="quantize a trace and evaluate the information bounds")
    p.add_argument("--trace", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--t", type=float, default=redundancy.DEFAULT_THRESHOLD)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--modality", default="both", choices=["both", "VISION", "TEXT", "vision", "text"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_info_bounds)
    return parser


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except InvalidArgument as exc:
        _emit_error(exc)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        _emit_error(exc)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
