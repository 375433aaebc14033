"""Command line interface.

  nlslab run    --config <path> --out <dir>
  nlslab report --run <dir> --kind <summary|localization|norms>
  nlslab sweep  --configs <glob> --jobs <n> [--out <dir>]
  nlslab verify [--only 1,2,...]

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import glob
import sys

from .errors import ConfigError, MissingRunError, NlsLabError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nlslab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)

    p_rep = sub.add_parser("report", help="emit reports from a stored run")
    p_rep.add_argument("--run", required=True)
    p_rep.add_argument("--kind", required=True, choices=["summary", "localization", "norms"])

    p_sw = sub.add_parser("sweep", help="run many configs in parallel")
    p_sw.add_argument("--configs", required=True, help="glob of config files")
    p_sw.add_argument("--jobs", type=int, default=1)
    p_sw.add_argument("--out", default="sweep_out")

    p_ver = sub.add_parser("verify", help="run the acceptance suite")
    p_ver.add_argument("--only", default="", help="comma-separated criterion numbers")
    p_ver.add_argument("--workdir", default=None)

    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            from .harness import load_config, run

            cfg = load_config(args.config)
            record = run(cfg, args.out)
            print(f"run complete: {record.termination} -> {record.run_dir}")
            return 0
        if args.command == "report":
            from .harness import report

            for path in report(args.run, args.kind):
                print(path)
            return 0
        if args.command == "sweep":
            from .harness import sweep

            paths = sorted(glob.glob(args.configs))
            if not paths:
                print(f"no configs match {args.configs!r}", file=sys.stderr)
                return 1
            results = sweep(paths, args.jobs, args.out)
            failures = [r for r in results if not r["ok"]]
            for r in results:
                status = r.get("termination", r.get("error"))
                print(f"{r['config']}: {status}")
            return 0 if not failures or len(failures) < len(results) else 2
        if args.command == "verify":
            from .acceptance import run_acceptance

            only = {int(x) for x in args.only.split(",") if x.strip()} or None
            results = run_acceptance(only=only, workdir=args.workdir)
            return 0 if all(r.passed for r in results) else 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except MissingRunError as exc:
        print(f"missing run: {exc}", file=sys.stderr)
        return 2
    except NlsLabError as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
