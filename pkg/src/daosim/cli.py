"""``daosim`` command line: pools, benchmark workloads, container images.

Exit codes: 0 success, 2 configuration error, 3 verification failure.
CSV goes to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import image
from .bench import WorkloadSpec, csv_header, run_workload
from .container import Pool, pool_create
from .errors import (
    AllReplicasFailed,
    ChecksumMismatch,
    ConfigError,
    DaosimError,
    ImageCorrupt,
    VerificationFailed,
)

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    # no prefix matching: flags are taken literally
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _dims(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 64,48 not {text!r}") from None


def _fault(text: str) -> tuple[str, int]:
    kind, _, target = text.rpartition(":")
    if kind not in ("corrupt-next", "drop-target") or not target.isdigit():
        raise argparse.ArgumentTypeError("faults look like corrupt-next:T or drop-target:T")
    return kind, int(target)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="daosim", description="Simulated transactional object store.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pool = sub.add_parser("pool", help="pool management")
    pool_sub = pool.add_subparsers(dest="action", required=True, parser_class=_Parser)
    create = pool_sub.add_parser("create", help="create a pool directory")
    create.add_argument("--targets", type=_positive, required=True)
    create.add_argument("--dir", type=Path, required=True)
    create.add_argument("--request-cost", type=float, default=1.0)
    create.add_argument("--byte-cost", type=float, default=0.0)

    bench = sub.add_parser("bench", help="run a workload and print one CSV row")
    bench.add_argument("kind", choices=("clamr", "legion", "pio"))
    bench.add_argument("--workers", type=_positive, default=None,
                       help="actors (compute tasks for pio)")
    bench.add_argument("--targets", type=_positive, default=None)
    bench.add_argument("--layout", default="contiguous", help="contiguous or chunked:N")
    bench.add_argument("--seed", type=int, default=42)
    bench.add_argument("--pool", type=Path, default=None,
                       help="pool directory (default: $DAOSIM_POOL, else in memory)")
    bench.add_argument("--inject-fault", type=_fault, action="append", default=[],
                       metavar="KIND:TARGET")
    bench.add_argument("--no-header", action="store_true")
    bench.add_argument("--problem-size", type=_positive, default=128)
    bench.add_argument("--timesteps", type=_positive, default=1)
    bench.add_argument("--elements", type=_positive, default=131072)
    bench.add_argument("--subregions", type=_positive, default=256)
    bench.add_argument("--ntasks", type=_positive, default=None)
    bench.add_argument("--niotasks", type=_positive, default=1)
    bench.add_argument("--method", choices=("box", "subset"), default="box")
    bench.add_argument("--dims", type=_dims, default=(64, 48))

    cont = sub.add_parser("container", help="container images")
    cont_sub = cont.add_subparsers(dest="action", required=True, parser_class=_Parser)
    dump = cont_sub.add_parser("dump", help="print an image's header and records")
    dump.add_argument("path", type=Path)
    load = cont_sub.add_parser("load", help="import an image into a pool as a container")
    load.add_argument("path", type=Path)
    load.add_argument("--pool", type=Path, default=None)
    load.add_argument("--name", required=True)

    fsck = sub.add_parser("fsck", help="verify image checksums (file or pool directory)")
    fsck.add_argument("path", type=Path)
    return p


def _err(msg: str) -> None:
    print(f"daosim: {msg}", file=sys.stderr)


def _pool_dir(arg: Path | None) -> Path | None:
    if arg is not None:
        return arg
    env = os.environ.get("DAOSIM_POOL")
    return Path(env) if env else None


def cmd_pool(args) -> int:
    pool = pool_create(args.targets, args.dir, request_cost=args.request_cost,
                       byte_cost=args.byte_cost)
    print(pool.pool_id)
    return EXIT_OK


def cmd_bench(args) -> int:
    pool_dir = _pool_dir(args.pool)
    pool = Pool.load(pool_dir) if pool_dir is not None else None
    targets = args.targets
    if targets is None:
        targets = pool.cluster.n_targets if pool is not None else 8
    workers = args.workers
    if args.kind == "pio":
        if args.ntasks is not None and workers is not None and args.ntasks != workers:
            raise ConfigError("--ntasks and --workers disagree")
        workers = args.ntasks or workers
    spec = WorkloadSpec(kind=args.kind, workers=workers or 1, targets=targets,
                        layout=args.layout, seed=args.seed, problem_size=args.problem_size,
                        timesteps=args.timesteps, elements=args.elements,
                        subregions=args.subregions, niotasks=args.niotasks,
                        method=args.method, dims=args.dims).validate()
    if pool is None:
        pool = pool_create(targets)
    for kind, target in args.inject_fault:
        if target >= pool.cluster.n_targets:
            raise ConfigError(f"fault target {target} outside the pool")
        pool.cluster.inject_fault(target, kind)
    report = run_workload(spec, pool)
    if not args.no_header:
        print(csv_header())
    print(report.csv_row())
    for t, (busy, served) in enumerate(zip(report.busy, report.served)):
        print(f"target {t}: requests={served} busy={busy:g}", file=sys.stderr)
    if report.messages is not None:
        print(f"rearrangement messages ({spec.method}): {report.messages}", file=sys.stderr)
    return EXIT_OK


def cmd_container(args) -> int:
    raw = args.path.read_bytes()
    if args.action == "dump":
        img = image.decode(raw)
        print(f"container {img.container_id} version {img.committed_version} "
              f"records {len(img.records)}")
        for r in img.records:
            kind = "write" if r.kind == image.WRITE else "punch"
            print(f"{kind} oid={r.oid.hi:016x}.{r.oid.lo:016x} dkey={r.dkey!r} "
                  f"akey={r.akey!r} offset={r.offset} len={len(r.payload)} epoch={r.epoch} "
                  f"crc={r.crc:08x}")
        return EXIT_OK
    pool_dir = _pool_dir(args.pool)
    if pool_dir is None:
        raise ConfigError("container load needs --pool or DAOSIM_POOL")
    pool = Pool.load(pool_dir)
    cont = pool.import_image(args.name, raw)
    print(f"{args.name} {cont.container_id} version {cont.committed_version}", file=sys.stderr)
    return EXIT_OK


def cmd_fsck(args) -> int:
    path = args.path
    files = sorted(path.glob("*.dcsf")) if path.is_dir() else [path]
    if not path.exists():
        raise ConfigError(f"{path} does not exist")
    bad = 0
    for f in files:
        problems = image.check(f.read_bytes())
        for p in problems:
            print(f"{f}: {p}", file=sys.stderr)
        bad += bool(problems)
        print(f"{f.name},{'ok' if not problems else 'corrupt'}")
    return EXIT_VERIFY if bad else EXIT_OK


COMMANDS = {"pool": cmd_pool, "bench": cmd_bench, "container": cmd_container, "fsck": cmd_fsck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (VerificationFailed, ChecksumMismatch, ImageCorrupt, AllReplicasFailed) as exc:
        _err(f"verification failed: {exc}")
        return EXIT_VERIFY
    except (ConfigError, DaosimError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
