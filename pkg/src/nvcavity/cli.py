"""Command-line front end.

    nvcavity run SCENARIO.json|DIR [--out PATH] [--format csv|json] [--seed N]
    nvcavity validate SCENARIO.json
    nvcavity list-tasks

Exit codes: 0 success, 2 parse error, 3 domain error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import NonConvergenceError, NVCavityError, ParseError
from .scenario import TASK_DESCRIPTIONS, parse_scenario, run_scenario
from .tables import emit

EXIT_OK, EXIT_PARSE, EXIT_DOMAIN, EXIT_NONCONV = 0, 2, 3, 4

log = logging.getLogger("nvcavity")


def write_atomic(path, data):
    """Write ``data`` via temp file + rename; ``-`` and non-regular files are written directly."""
    if str(path) == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    path = Path(path)
    if path.exists() and not path.is_file():
        # devices and pipes cannot be renamed over
        with open(path, "wb") as fh:
            fh.write(data)
        return
    if path.is_symlink():
        path = path.resolve()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _resolve_output(scenario, scenario_path, out, fmt):
    fmt = fmt or scenario.output.get("format", "csv")
    if out is not None:
        return Path(out), fmt
    if "path" in scenario.output:
        return Path(scenario_path).parent / scenario.output["path"], fmt
    return None, fmt


def run_file(scenario_path, out=None, fmt=None, seed=None):
    """Run one scenario file; returns ``(exit_code, output_bytes_or_None)``."""
    text = Path(scenario_path).read_bytes()
    try:
        scenario = parse_scenario(text)
    except ParseError as exc:
        log.error("%s: %s", scenario_path, exc)
        return EXIT_PARSE, None
    target, fmt = _resolve_output(scenario, scenario_path, out, fmt)
    code = EXIT_OK
    try:
        table = run_scenario(scenario, seed=seed)
    except NonConvergenceError as exc:
        log.error("%s: task '%s': %s", scenario_path, scenario.task, exc)
        table, code = exc.result, EXIT_NONCONV
    except (NVCavityError, ValueError) as exc:
        log.error("%s: task '%s': %s", scenario_path, scenario.task, exc)
        return EXIT_DOMAIN, None
    try:
        data = emit(table, fmt)
    except NVCavityError as exc:
        log.error("%s: %s", scenario_path, exc)
        return EXIT_DOMAIN, None
    if target is not None:
        write_atomic(target, data)
    return code, data


def _batch_job(args):
    path, out_dir, fmt, seed = args
    out = None
    if out_dir is not None:
        out = Path(out_dir) / f"{Path(path).stem}.{fmt or 'csv'}"
    code, data = run_file(path, out, fmt, seed)
    if out is None and data is not None:
        # no destination given anywhere: write next to the scenario
        text = Path(path).read_bytes()
        scenario = parse_scenario(text)
        if "path" not in scenario.output:
            ext = fmt or scenario.output.get("format", "csv")
            write_atomic(Path(path).with_suffix(f".{ext}"), data)
    return str(path), code


def run_batch(directory, out_dir=None, fmt=None, seed=None, workers=None):
    files = sorted(Path(directory).glob("*.json"))
    jobs = [(str(f), out_dir, fmt, seed) for f in files]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_batch_job, jobs))
    for path, code in results:
        log.info("%s -> exit %d", path, code)
    return max((code for _, code in results), default=EXIT_OK)


def build_parser():
    parser = argparse.ArgumentParser(prog="nvcavity", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file or a directory of them")
    run.add_argument("scenario")
    run.add_argument("--out", help="output file (or directory for batch runs)")
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--workers", type=int, help="batch worker processes")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario")

    sub.add_parser("list-tasks", help="list the available tasks")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "list-tasks":
        for name, desc in TASK_DESCRIPTIONS.items():
            print(f"{name:<11} {desc}")
        return EXIT_OK
    if args.command == "validate":
        try:
            parse_scenario(Path(args.scenario).read_bytes())
        except ParseError as exc:
            print(f"invalid: {exc}", file=sys.stderr)
            return EXIT_PARSE
        print("ok")
        return EXIT_OK

    if Path(args.scenario).is_dir():
        return run_batch(args.scenario, args.out, args.format, args.seed, args.workers)
    code, data = run_file(args.scenario, args.out, args.format, args.seed)
    if data is not None and args.out is None:
        scenario = parse_scenario(Path(args.scenario).read_bytes())
        if "path" not in scenario.output:
            sys.stdout.buffer.write(data)
            sys.stdout.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
