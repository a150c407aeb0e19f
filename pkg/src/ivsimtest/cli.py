"""Command-line front end.

Commands: test, test-quantile, composite, spec, spec-quantile, ar, bound, mc.
All test commands read a CSV with columns y, x1..xp, z1..zq and fit the
built-in linear model g(x, theta) = x . theta. Reports are JSON lines (one
object per line) or flat CSV; every report embeds the seed, draw count, level,
and an FNV-1a hash of the input file so it can be reproduced exactly.

Exit codes: 0 = computed (rejection is data, not an error), 2 = usage or
input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Optional

import numpy as np

from .anderson_rubin import ar_statistic
from .montecarlo import (
    ERROR_KINDS,
    CSV_HEADER,
    ErrorDist,
    ExperimentDesign,
    cell_record,
    replicate_table,
    run_cell,
    write_cells_csv,
)
from .stats import Dataset, ModelSpec, ThetaPartition
from .testing import (
    OptimizerConfig,
    TestConfig,
    test_composite_auto,
    test_simple,
    test_simple_quantile,
    test_specification,
    test_specification_quantile,
)
from .theory import BoundInputs, erp_bound, estimate_theory_constants


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used to fingerprint input files in reports."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv(path: str) -> Dataset:
    """Read a dataset from CSV with header columns y, x1..xp, z1..zq.

    Column order in the file is free; mapping is by name. Any blank or
    non-numeric field rejects the file with its data row number (the first
    data row after the header is row 1).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file; a header row is required")
    header = [h.strip() for h in rows[0]]
    xcols: dict[int, int] = {}
    zcols: dict[int, int] = {}
    ycol = None
    for pos, name in enumerate(header):
        if name == "y":
            if ycol is not None:
                raise ValueError(f"{path}: duplicate column 'y'")
            ycol = pos
        elif name.startswith("x") and name[1:].isdigit():
            if int(name[1:]) in xcols:
                raise ValueError(f"{path}: duplicate column {name!r}")
            xcols[int(name[1:])] = pos
        elif name.startswith("z") and name[1:].isdigit():
            if int(name[1:]) in zcols:
                raise ValueError(f"{path}: duplicate column {name!r}")
            zcols[int(name[1:])] = pos
        else:
            raise ValueError(f"{path}: unrecognized column {name!r} (expected y, x1.., z1..)")
    if ycol is None:
        raise ValueError(f"{path}: missing required column 'y'")
    if not zcols:
        raise ValueError(f"{path}: at least one instrument column z1.. is required")
    for cols, label in ((xcols, "x"), (zcols, "z")):
        if cols and sorted(cols) != list(range(1, len(cols) + 1)):
            raise ValueError(f"{path}: {label} columns must be numbered consecutively from 1")

    records = []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ValueError(f"{path}: data row {i} has {len(row)} fields, expected {len(header)}")
        vals = []
        for pos, fieldtext in enumerate(row):
            try:
                v = float(fieldtext)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric value {fieldtext!r} in column "
                    f"{header[pos]!r} at data row {i}"
                ) from None
            if not math.isfinite(v):
                raise ValueError(f"{path}: non-finite value in column {header[pos]!r} at data row {i}")
            vals.append(v)
        records.append(vals)
    if len(records) < 2:
        raise ValueError(f"{path}: fewer than 2 data rows")
    arr = np.asarray(records, dtype=np.float64)
    y = arr[:, ycol]
    p = len(xcols)
    x = arr[:, [xcols[j] for j in range(1, p + 1)]] if p else np.zeros((len(records), 1))
    z = arr[:, [zcols[j] for j in range(1, len(zcols) + 1)]]
    return Dataset(y=y, x=x, z=z)


def write_dataset_csv(data: Dataset, path: str) -> None:
    """Serialize a dataset with shortest-round-trip decimal digits."""
    header = ["y"] + [f"x{j + 1}" for j in range(data.p)] + [f"z{j + 1}" for j in range(data.q)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(data.n):
            row = [repr(float(data.y[i]))]
            row += [repr(float(v)) for v in data.x[i]]
            row += [repr(float(v)) for v in data.z[i]]
            fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# report output


def _json_default(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v)}")


def _flatten(rec: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in rec.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, prefix=f"{key}."))
        elif isinstance(v, (list, tuple, np.ndarray)):
            flat[key] = json.dumps(v, default=_json_default)
        else:
            flat[key] = v
    return flat


def _emit(record: dict, args) -> None:
    fmt = getattr(args, "format", "jsonl")
    if fmt == "jsonl":
        text = json.dumps(record, default=_json_default) + "\n"
    else:
        flat = _flatten(record)
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(flat.keys())
        writer.writerow(
            repr(float(v)) if isinstance(v, float) else v for v in flat.values()
        )
        text = buf.getvalue()
    out = getattr(args, "out", None)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _data_fingerprint(path: str) -> str:
    with open(path, "rb") as fh:
        return f"{fnv1a64(fh.read()):016x}"


def _test_record(command: str, args, result) -> dict:
    return {
        "command": command,
        "statistic": result.statistic,
        "critical_value": result.critical_value,
        "p_value": result.p_value,
        "reject": result.reject,
        "alpha": args.alpha,
        "draws": args.draws,
        "seed": args.seed,
        "theta": [float(v) for v in result.theta],
        "data": args.data,
        "data_fnv1a64": _data_fingerprint(args.data),
        "diagnostics": result.diagnostics,
    }


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated float list, got {text!r}")


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated int list, got {text!r}")


def _bounds(text: str):
    vals = _floats(text)
    if len(vals) % 2:
        raise argparse.ArgumentTypeError("bounds need an even number of values: lo1,hi1,lo2,hi2,...")
    return [(vals[2 * i], vals[2 * i + 1]) for i in range(len(vals) // 2)]


def _add_common(p, data_required=True):
    p.add_argument("--data", required=data_required, help="input CSV (columns y, x1.., z1..)")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--draws", type=int, default=20000, help="simulation draws for the critical value")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--config", default=None, help="flat key=value file; keys mirror flags")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivsimtest",
        description="Moment tests for IV models with simulated critical values.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="simple hypothesis test: theta equals theta0")
    _add_common(p)
    p.add_argument("--theta0", type=_floats, required=True, help="comma-separated parameter values")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("test-quantile", help="simple test in the quantile model")
    _add_common(p)
    p.add_argument("--theta0", type=_floats, required=True)
    p.add_argument("--a-q", type=float, required=True, help="quantile level in (0,1)")
    p.set_defaults(func=cmd_test_quantile)

    p = sub.add_parser("composite", help="test a parameter block with the rest free")
    _add_common(p)
    p.add_argument("--tested", type=_ints, required=True, help="tested coordinate indices (0-based)")
    p.add_argument("--g0", type=_floats, required=True, help="hypothesized values for the tested block")
    p.add_argument("--bounds", type=_bounds, default=None, help="nuisance box lo1,hi1,...")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("spec", help="specification test of the linear family")
    _add_common(p)
    p.add_argument("--bounds", type=_bounds, required=True, help="parameter box lo1,hi1,...")
    p.set_defaults(func=cmd_spec)

    p = sub.add_parser("spec-quantile", help="quantile-model specification test")
    _add_common(p)
    p.add_argument("--bounds", type=_bounds, required=True)
    p.add_argument("--a-q", type=float, required=True)
    p.set_defaults(func=cmd_spec_quantile)

    p = sub.add_parser("ar", help="Anderson-Rubin test (linear model)")
    _add_common(p)
    p.add_argument("--beta0", type=_floats, required=True, help="values for the tested x columns")
    p.add_argument("--exog", type=_ints, default=[], help="x columns to partial out (0-based)")
    p.set_defaults(func=cmd_ar)

    p = sub.add_parser("bound", help="finite-sample rejection-probability error bound")
    _add_common(p, data_required=False)
    p.add_argument("--q", type=int, default=None, help="instrument count (with explicit constants)")
    p.add_argument("--n", type=int, default=None, help="sample size (with explicit constants)")
    p.add_argument("--ell", type=float, default=None)
    p.add_argument("--m3", type=float, default=None)
    p.add_argument("--c-sigma", type=float, default=None)
    p.add_argument("--t", type=float, required=True, help="tail parameter")
    p.add_argument("--estimate", action="store_true", help="estimate constants from --data")
    p.add_argument("--theta0", type=_floats, default=None, help="parameter for --estimate")
    p.add_argument("--a-q", type=float, default=None, help="quantile level for --estimate")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("mc", help="replicate the simulation tables")
    p.add_argument("--table", type=int, choices=(1, 2, 3, 4, 5), default=None)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=20000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--config", default=None, help="flat key=value file; keys mirror flags")
    p.add_argument("--custom", action="store_true", help="run a single custom cell instead of a table")
    p.add_argument("--design", choices=("null", "simple", "composite"), default=None)
    p.add_argument("--dist", choices=ERROR_KINDS, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--test", choices=("tn", "ar"), default="tn")
    p.set_defaults(func=cmd_mc)

    return parser


def _apply_config(argv: list) -> list:
    """Expand a --config key=value file into flags placed before the explicit
    ones, so command-line flags win. Unknown keys fail parsing (exit 2)."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv  # argparse will report the missing value
    path = argv[at + 1]
    extra = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    extra.append(f"--{key}")
            else:
                extra.extend([f"--{key}", value])
    rest = argv[:at] + argv[at + 2:]
    return [rest[0]] + extra + rest[1:]


# ---------------------------------------------------------------------------
# command handlers


def cmd_test(args) -> int:
    data = load_csv(args.data)
    model = ModelSpec.linear_model(data.p)
    config = TestConfig(alpha=args.alpha, draws=args.draws, seed=args.seed)
    result = test_simple(data, model, np.asarray(args.theta0), config)
    _emit(_test_record("test", args, result), args)
    return 0


def cmd_test_quantile(args) -> int:
    data = load_csv(args.data)
    model = ModelSpec.linear_model(data.p)
    config = TestConfig(alpha=args.alpha, draws=args.draws, seed=args.seed)
    result = test_simple_quantile(data, model, np.asarray(args.theta0), args.a_q, config)
    rec = _test_record("test-quantile", args, result)
    rec["a_q"] = args.a_q
    _emit(rec, args)
    return 0


def cmd_composite(args) -> int:
    data = load_csv(args.data)
    model = ModelSpec.linear_model(data.p)
    partition = ThetaPartition(tested=tuple(args.tested), g0=np.asarray(args.g0), d=data.p)
    opt = OptimizerConfig(bounds=args.bounds) if args.bounds else OptimizerConfig()
    config = TestConfig(alpha=args.alpha, draws=args.draws, seed=args.seed, optimizer=opt)
    result = test_composite_auto(data, model, partition, config)
    rec = _test_record("composite", args, result)
    rec["tested"] = list(args.tested)
    rec["g0"] = list(args.g0)
    _emit(rec, args)
    return 0


def cmd_spec(args) -> int:
    data = load_csv(args.data)
    model = ModelSpec.linear_model(data.p)
    config = TestConfig(alpha=args.alpha, draws=args.draws, seed=args.seed)
    result = test_specification(data, model, args.bounds, config)
    _emit(_test_record("spec", args, result), args)
    return 0


def cmd_spec_quantile(args) -> int:
    data = load_csv(args.data)
    model = ModelSpec.linear_model(data.p)
    config = TestConfig(alpha=args.alpha, draws=args.draws, seed=args.seed)
    result = test_specification_quantile(data, model, args.a_q, args.bounds, config)
    rec = _test_record("spec-quantile", args, result)
    rec["a_q"] = args.a_q
    _emit(rec, args)
    return 0


def cmd_ar(args) -> int:
    data = load_csv(args.data)
    result = ar_statistic(data, np.asarray(args.beta0), tuple(args.exog), alpha=args.alpha)
    record = {
        "command": "ar",
        "statistic": result.statistic,
        "df1": result.df1,
        "df2": result.df2,
        "critical_value": result.critical_value,
        "reject": result.reject,
        "alpha": args.alpha,
        "beta0": list(args.beta0),
        "exog": list(args.exog),
        "data": args.data,
        "data_fnv1a64": _data_fingerprint(args.data),
    }
    _emit(record, args)
    return 0


def cmd_bound(args) -> int:
    if args.estimate:
        if not args.data or args.theta0 is None:
            raise ValueError("--estimate needs --data and --theta0")
        data = load_csv(args.data)
        model = ModelSpec.linear_model(data.p)
        consts = estimate_theory_constants(data, model, np.asarray(args.theta0), a_q=args.a_q)
        q, n = data.q, data.n
        provenance = "estimated"
    else:
        missing = [k for k in ("q", "n", "ell", "m3", "c_sigma") if getattr(args, k) is None]
        if missing:
            raise ValueError(f"bound needs --{', --'.join(missing)} (or --estimate with --data)")
        consts = (args.ell, args.m3, args.c_sigma)
        q, n = args.q, args.n
        provenance = "supplied"
    if args.t <= 2.0 * math.log(q):
        raise ValueError(f"tail parameter t = {args.t} must exceed 2*log(q) = {2.0 * math.log(q):.4f}")
    inp = BoundInputs(q=q, n=n, ell=consts[0], m3=consts[1], c_sigma=consts[2], t=args.t)
    res = erp_bound(inp)
    record = {
        "command": "bound",
        "q": q,
        "n": n,
        "ell": consts[0],
        "m3": consts[1],
        "c_sigma": consts[2],
        "t": args.t,
        "constants": provenance,
        "r_t": res.r_t,
        "r_tilde_shift": res.r_tilde_shift,
        "berry_term": res.berry_term,
        "branch_a": res.branch_a,
        "branch_b": res.branch_b,
        "bound": res.bound,
        "confidence": res.confidence,
        "condition_ok": res.condition_ok,
        "shift_valid": res.shift_valid,
        "feasible": res.feasible,
        "vacuous": res.vacuous,
        "reason": res.reason,
    }
    if args.estimate:
        record["data"] = args.data
        record["data_fnv1a64"] = _data_fingerprint(args.data)
        record["note"] = "ell/m3/c_sigma are sample ESTIMATES, not certified constants"
    _emit(record, args)
    return 0


def _custom_design(args) -> ExperimentDesign:
    needed = {"null": ("dist", "n", "q"), "simple": ("dist", "n", "q", "beta", "c"),
              "composite": ("dist", "n", "q", "beta", "c")}
    if args.design is None:
        raise ValueError("--custom needs --design null|simple|composite")
    missing = [k for k in needed[args.design] if getattr(args, k) is None]
    if missing:
        raise ValueError(f"--custom {args.design} needs --{', --'.join(missing)}")
    table = {"null": 1, "simple": 2, "composite": 4}[args.design]
    return ExperimentDesign(
        table=table, dist=ErrorDist(args.dist), n=args.n, q=args.q,
        beta=args.beta, c=args.c, reps=args.reps, alpha=args.alpha,
        draws=args.draws, base_seed=args.seed,
        test="tn" if table == 1 else args.test,
    )


def cmd_mc(args) -> int:
    if args.custom:
        cell = run_cell(_custom_design(args), workers=args.workers)
        cells = [cell]
    elif args.table is not None:
        def progress(done, total, cell):
            rec = cell_record(cell)
            sys.stderr.write(
                f"table {rec['table']} cell {done}/{total} dist={rec['dist']} "
                f"n={rec['n']} q={rec['q']} test={rec['test']} "
                f"rate={rec['rate']:.3f} ({cell.wall_time:.1f}s)\n"
            )
            sys.stderr.flush()

        cells = replicate_table(
            args.table, reps=args.reps, base_seed=args.seed, draws=args.draws,
            alpha=args.alpha, workers=args.workers, progress=progress,
        )
    else:
        raise ValueError("mc needs --table 1..5 or --custom")

    if args.format == "csv":
        buf = io.StringIO()
        write_cells_csv(cells, buf)
        text = buf.getvalue()
    else:
        text = "".join(
            json.dumps(cell_record(c), default=_json_default) + "\n" for c in cells
        )
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config(argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
