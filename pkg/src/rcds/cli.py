"""Command-line entry point: ``rcds serve|pull|push|sync-dir|bench|analyze``."""

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from .errors import RcdsError
from .protocol import PHASES, SessionConfig, run_client
from .transport import connect, listen
from .tree import TreeParams

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _int_list(text):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers separated by commas, got {text!r}")


def _tree_args(p, defaults=True):
    d = TreeParams()
    p.add_argument("--levels", type=int, default=d.levels if defaults else None,
                   help=f"tree depth L (default {d.levels})")
    p.add_argument("--branch", type=int, default=d.branch if defaults else None,
                   help=f"expected branching p (default {d.branch})")
    p.add_argument("--window", type=int, default=d.window if defaults else None,
                   help=f"rolling-hash window w (default {d.window})")
    p.add_argument("--no-fallback", action="store_true",
                   help="fail instead of sending the whole file when verification fails")


def _format_arg(p):
    p.add_argument("--format", choices=("text", "csv"), default="text")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcds", description="Synchronize strings, files and directories by "
                                 "recursive content-dependent shingling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("serve", help="serve a file or directory")
    p.add_argument("path")
    p.add_argument("--addr", required=True, help="HOST:PORT to listen on")
    _tree_args(p, defaults=False)
    p.add_argument("--once", action="store_true", help="exit after one session")
    _format_arg(p)

    for name, flag, helptext in (("pull", "--from", "fetch FILE from a server"),
                                 ("push", "--to", "send FILE to a server"),
                                 ("sync", "--with", "two-way exchange: each side ends "
                                                    "with the other's file")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("file")
        p.add_argument(flag, dest="addr", required=True, metavar="HOST:PORT")
        _tree_args(p)
        _format_arg(p)

    p = sub.add_parser("sync-dir", help="make DIR a copy of a served directory")
    p.add_argument("dir")
    p.add_argument("--from", dest="addr", required=True, metavar="HOST:PORT")
    p.add_argument("--paranoid", action="store_true",
                   help="also compare file contents, not only names and sizes")
    _tree_args(p)
    _format_arg(p)

    p = sub.add_parser("bench", help="run a loopback measurement sweep")
    p.add_argument("--size", type=_int_list, default=[100_000])
    p.add_argument("--budget", type=_int_list, default=[100])
    p.add_argument("--bursts", type=_int_list, default=[10])
    p.add_argument("--levels", type=_int_list, default=[4])
    p.add_argument("--branch", type=_int_list, default=[8])
    p.add_argument("--window", type=_int_list, default=[16])
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--baseline", action="store_true", help="add the fixed-block baseline")
    p.add_argument("--timings", action="store_true", help="add per-phase time columns")
    p.add_argument("--out", help="write CSV here instead of standard output")
    p.add_argument("--format", choices=("text", "csv"), default="csv")

    p = sub.add_parser("analyze", help="evaluate the cut-point and failure formulas")
    p.add_argument("--space", type=int, required=True, help="hash space s")
    p.add_argument("--min-distance", type=int, required=True, help="minimum distance h")
    p.add_argument("--n", type=int, help="number of partitions for the failure bound")
    p.add_argument("--redundancy", type=int, default=2)
    p.add_argument("--bits", type=int, default=64, choices=(32, 64))
    _format_arg(p)
    return parser


def _session_cfg(args, direction, tree=True) -> SessionConfig:
    params = None
    if tree and None not in (args.levels, args.branch, args.window):
        params = TreeParams(args.levels, args.branch, args.window)
    elif any(v is not None for v in (args.levels, args.branch, args.window)):
        d = TreeParams()
        params = TreeParams(args.levels or d.levels, args.branch or d.branch,
                            args.window or d.window)
    return SessionConfig(tree=params, direction=direction,
                         fallback_allowed=not args.no_fallback)


def _print_rows(rows, fmt, out=None):
    out = out or sys.stdout
    if fmt == "csv":
        writer = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    else:
        for row in rows:
            print("  ".join(f"{k} {v}" for k, v in row.items()), file=out)


def report_row(rep) -> dict:
    row = {"role": rep.role, "direction": rep.direction}
    for phase in PHASES:
        row[f"{phase}_sent"] = rep.bytes_sent[phase]
        row[f"{phase}_received"] = rep.bytes_received[phase]
    row.update(total_bytes=rep.total_bytes, literal_bytes=rep.literal_bytes,
               partitions=rep.partitions_total, unmatched=rep.partitions_unmatched,
               rounds=rep.rounds, fallback=int(rep.fallback_used),
               seconds=round(rep.times.get("total", 0.0), 6))
    return row


def _show_report(rep, fmt):
    if fmt == "csv":
        _print_rows([report_row(rep)], "csv")
    else:
        print(rep.format_text())


def cmd_serve(args):
    from .fssync import serve_path
    target = Path(args.path)
    cfg = _session_cfg(args, "pull", tree=False)
    with listen(args.addr) as server:
        print(f"serving {target} on {server.address}", file=sys.stderr, flush=True)
        while True:
            link = server.accept()
            try:
                rep, _ = serve_path(target, cfg, link)
                if hasattr(rep, "format_text"):
                    _show_report(rep, args.format)
            except (RcdsError, ConnectionError, OSError) as exc:
                print(f"session failed: {exc}", file=sys.stderr)
                if args.once:
                    return EXIT_FAIL
            finally:
                link.close()
            if args.once:
                return EXIT_OK


def cmd_file(args, direction):
    path = Path(args.file)
    data = path.read_bytes() if path.exists() else b""
    if direction == "push" and not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    cfg = _session_cfg(args, direction)
    with connect(args.addr) as link:
        final, rep = run_client(data, cfg, link)
    if final != data:
        tmp = path.with_name(f".{path.name}.rcds-tmp")
        tmp.write_bytes(final)
        tmp.replace(path)
    _show_report(rep, args.format)
    return EXIT_OK


def cmd_sync_dir(args):
    from .fssync import sync_dir
    cfg = _session_cfg(args, "pull")
    with connect(args.addr) as link:
        rep = sync_dir(args.dir, link, cfg, paranoid=args.paranoid)
    if args.format == "csv":
        p = rep.plan
        _print_rows([{"unchanged": len(p.unchanged), "changed": len(p.changed),
                      "new": len(p.new), "deleted": len(p.deleted),
                      "skipped": len(p.skipped), "total_bytes": rep.total_bytes,
                      "fallbacks": rep.fallback_count}], "csv")
    else:
        print(rep.format_text())
        for kind in ("changed", "new", "deleted", "skipped"):
            for name in getattr(rep.plan, kind):
                print(f"  {kind:<8} {name}")
    return EXIT_OK


def cmd_bench(args):
    from .bench import run_sweep, summarize, write_csv
    grid = {k: getattr(args, k) for k in ("size", "budget", "bursts", "levels",
                                           "branch", "window")}
    rows = run_sweep(grid, args.seeds, baseline=args.baseline, timings=args.timings)
    if args.format == "csv":
        text = write_csv(rows, timings=args.timings)
    else:
        buf = io.StringIO()
        for key, stats in summarize(rows, "total_bytes").items():
            ci = "" if stats["ci95"] is None else f" ± {stats['ci95']:.1f}"
            buf.write(f"N={key[0]} budget={key[1]} L={key[3]} p={key[4]} w={key[5]}: "
                      f"total bytes median {stats['median']:.0f}, "
                      f"mean {stats['mean']:.1f}{ci} over {stats['n']} seeds\n")
        text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r["converged"] == 1 for r in rows) else EXIT_FAIL


def cmd_analyze(args):
    from .bench import failure_bound, partition_probability
    if args.space < 1 or args.min_distance < 1:
        raise ValueError("--space and --min-distance must be >= 1")
    row = {"space": args.space, "min_distance": args.min_distance,
           "partition_probability": f"{partition_probability(args.space, args.min_distance):.10f}"}
    if args.n is not None:
        row.update(n=args.n, redundancy=args.redundancy, bits=args.bits,
                   failure_bound=f"{failure_bound(args.n, args.redundancy, args.bits):.10e}")
    _print_rows([row], args.format)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {
        "serve": cmd_serve,
        "pull": lambda a: cmd_file(a, "pull"),
        "push": lambda a: cmd_file(a, "push"),
        "sync": lambda a: cmd_file(a, "both"),
        "sync-dir": cmd_sync_dir,
        "bench": cmd_bench,
        "analyze": cmd_analyze,
    }
    try:
        return handlers[args.command](args)
    except (RcdsError, ConnectionError, OSError) as exc:
        print(f"rcds: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"rcds: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
