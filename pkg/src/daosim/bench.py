"""Synthetic workloads shaped after three scientific I/O patterns.

* ``clamr``: one container per timestep holding a fixed group/dataset tree;
  workers write disjoint slices of the cell-state arrays in one transaction.
* ``legion``: a shared 1-D region split into subregions; each subregion is
  written in its own transaction and read back while later ones are in flight.
* ``pio``: compute tasks hand row blocks to a smaller set of I/O tasks (box
  or subset rearrangement), which write them as NetCDF-style variables.

Every run verifies all written bytes and reports statistics gathered over
its data phases only (setup metadata is excluded). Workers are threads
sharing the pool; with the virtual clock the report is deterministic.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .arraync import NcFile
from .container import Pool, pool_create
from .errors import ConfigError, VerificationFailed
from .hier import Chunked, Contiguous, HierFile, chunk_dims_for

KINDS = ("clamr", "legion", "pio")
CSV_FIELDS = ("kind", "seed", "workers", "targets", "layout", "bytes_written", "bytes_read",
              "virtual_elapsed", "max_target_share", "version")

# leaf datasets of the CLAMR checkpoint file; the /default cell arrays are
# sized by the problem, the rest get small fixed synthetic lengths
CLAMR_TREE = {
    "bootstrap": {"double_vals": ("f8", 16), "int_vals": ("i4", 16)},
    "mesh": {"double_vals": ("f8", 16), "cpu_timers": ("f8", 8), "gpu_timers": ("f8", 8),
             "int_dist_vals": ("i4", 16), "int_vals": ("i4", 16)},
    "default": {"storage": ("i8", 1), "i": ("i4", None), "j": ("i4", None),
                "level": ("i4", None), "H": ("f8", None), "U": ("f8", None), "V": ("f8", None)},
    "state": {"cpu_timers": ("f8", 8), "gpu_timers": ("f8", 8), "int_vals": ("i4", 8)},
}
PIO_VARS = (("ints", "i4"), ("reals", "f4"), ("doubles", "f8"))


@dataclass(frozen=True)
class WorkloadSpec:
    """One benchmark configuration.

    ``workers`` is the number of actors; for ``pio`` it is the number of
    compute tasks, of which ``niotasks`` do the I/O. ``layout`` is
    ``contiguous`` or ``chunked:N`` with N elements per chunk.
    """

    kind: str
    workers: int = 1
    targets: int = 8
    layout: str = "contiguous"
    seed: int = 42
    problem_size: int = 128
    timesteps: int = 1
    elements: int = 131072
    subregions: int = 256
    niotasks: int = 1
    method: str = "box"
    dims: tuple = (64, 48)

    @property
    def chunk_size(self) -> int | None:
        if self.layout == "contiguous":
            return None
        kind, _, n = self.layout.partition(":")
        if kind != "chunked" or not n.isdigit() or int(n) < 1:
            raise ConfigError(f"layout must be 'contiguous' or 'chunked:N', not {self.layout!r}")
        return int(n)

    def problem_elements(self) -> int:
        if self.kind == "clamr":
            return self.problem_size ** 2
        if self.kind == "legion":
            return self.elements
        return math.prod(self.dims)

    def validate(self) -> "WorkloadSpec":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown workload {self.kind!r}")
        if self.workers < 1 or self.targets < 1:
            raise ConfigError("workers and targets must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.kind == "clamr":
            if self.problem_size < 1 or self.timesteps < 1:
                raise ConfigError("problem size and timesteps must be >= 1")
            if self.workers > self.problem_size ** 2:
                raise ConfigError("more workers than cells")
        elif self.kind == "legion":
            if self.elements < 1 or self.subregions < 1:
                raise ConfigError("elements and subregions must be >= 1")
            if self.subregions < self.workers:
                raise ConfigError("need at least one subregion per worker")
            if self.subregions > self.elements:
                raise ConfigError("more subregions than elements")
        else:
            if not 1 <= self.niotasks <= self.workers:
                raise ConfigError("need 1 <= niotasks <= ntasks")
            if self.method not in ("box", "subset"):
                raise ConfigError(f"unknown rearrangement method {self.method!r}")
            if not 1 <= len(self.dims) <= 3 or any(d < 1 for d in self.dims):
                raise ConfigError(f"bad dims {self.dims}")
            if self.dims[0] < self.workers:
                raise ConfigError("the first dimension needs a row per compute task")
        chunk = self.chunk_size
        if chunk is not None and chunk > self.problem_elements():
            raise ConfigError(f"chunk size {chunk} exceeds the problem size "
                              f"({self.problem_elements()} elements)")
        return self

    def layout_for(self, dims) -> Contiguous | Chunked:
        chunk = self.chunk_size
        if chunk is None:
            return Contiguous()
        return Chunked(chunk_dims_for(dims, chunk))


@dataclass
class RunReport:
    kind: str
    seed: int
    workers: int
    targets: int
    layout: str
    bytes_written: int
    bytes_read: int
    virtual_elapsed: float
    max_target_share: float
    version: int
    busy: tuple = ()
    served: tuple = ()
    generated_bytes: int = 0
    messages: int | None = None
    paths: tuple = field(default=(), repr=False)

    def csv_row(self) -> str:
        return ",".join([self.kind, str(self.seed), str(self.workers), str(self.targets),
                         self.layout, str(self.bytes_written), str(self.bytes_read),
                         f"{self.virtual_elapsed:.6f}", f"{self.max_target_share:.6f}",
                         str(self.version)])


def csv_header() -> str:
    return ",".join(CSV_FIELDS)


class _Meter:
    """Accumulates per-target deltas and makespan over measured phases."""

    def __init__(self, pool: Pool):
        self.cluster = pool.cluster
        n = self.cluster.n_targets
        self.busy = [0.0] * n
        self.served = [0] * n
        self.written = 0
        self.read = 0
        self.elapsed = 0.0

    @contextmanager
    def phase(self):
        c = self.cluster
        t0 = c.sync()
        before = c.queue_stats()
        yield
        t1 = c.sync()
        after = c.queue_stats()
        self.elapsed += t1 - t0
        for i, (a, b) in enumerate(zip(before, after)):
            self.busy[i] += b.busy_time - a.busy_time
            self.served[i] += b.served - a.served
            self.written += b.bytes_written - a.bytes_written
            self.read += b.bytes_read - a.bytes_read

    def report(self, spec: WorkloadSpec, version: int, generated: int, **extra) -> RunReport:
        total = sum(self.busy)
        return RunReport(spec.kind, spec.seed, spec.workers, spec.targets, spec.layout,
                         self.written, self.read, self.elapsed,
                         max(self.busy) / total if total else 0.0, version,
                         tuple(self.busy), tuple(self.served), generated, **extra)


def _check(label: str, got, expect: bytes) -> None:
    if not got.complete or got.data != expect:
        raise VerificationFailed(f"read-back mismatch in {label}")


def _prefix(pool: Pool, kind: str) -> str:
    k = 0
    while any(n.startswith(f"run{k}_") for n in pool.containers):
        k += 1
    return f"run{k}_{kind}"


def _slices(n: int, parts: int) -> list[tuple[int, int]]:
    edges = [i * n // parts for i in range(parts + 1)]
    return list(zip(edges[:-1], edges[1:]))


# -- clamr -------------------------------------------------------------------

def clamr_data(n: int, seed: int, step: int) -> dict[str, np.ndarray]:
    """Synthetic cell state and bookkeeping arrays for one timestep."""
    rng = np.random.default_rng([seed, step])
    ncells = n * n
    idx = np.arange(ncells)
    out = {}
    for group, members in CLAMR_TREE.items():
        for name, (dtype, size) in members.items():
            path = f"/{group}/{name}"
            if size is None:
                continue
            if np.dtype(dtype).kind == "f":
                out[path] = rng.random(size).astype(dtype)
            else:
                out[path] = rng.integers(0, 1 << 20, size).astype(dtype)
    out["/default/storage"] = np.array([ncells], dtype="i8")
    out["/default/i"] = (idx % n).astype("i4")
    out["/default/j"] = (idx // n).astype("i4")
    out["/default/level"] = rng.integers(0, 3, ncells).astype("i4")
    out["/default/H"] = 10.0 + rng.random(ncells)
    out["/default/U"] = rng.standard_normal(ncells)
    out["/default/V"] = rng.standard_normal(ncells)
    return out


def run_clamr(spec: WorkloadSpec, pool: Pool | None = None) -> RunReport:
    spec.validate()
    pool = _pool(spec, pool)
    meter = _Meter(pool)
    n, ncells = spec.problem_size, spec.problem_size ** 2
    prefix = _prefix(pool, "clamr")
    generated = 0
    with ThreadPoolExecutor(spec.workers) as ex:
        for step in range(spec.timesteps):
            data = clamr_data(n, spec.seed, step)
            generated += sum(a.nbytes for a in data.values())
            f = HierFile.create(pool, f"{prefix}_t{step:04d}", auto=False)
            with f.transaction():
                sets = {}
                for group, members in CLAMR_TREE.items():
                    g = f.root.group_create(group)
                    for name, (dtype, size) in members.items():
                        path = f"/{group}/{name}"
                        dims = (len(data[path]),)
                        layout = spec.layout_for(dims) if size is None else Contiguous()
                        sets[path] = g.dataset_create(name, dims, np.dtype(dtype).itemsize,
                                                      layout)
                cells = [p for p, (_, s) in _leaves() if s is None]
                small = [p for p, (_, s) in _leaves() if s is not None]

                def write(w, lo, hi):
                    for p in cells:
                        sets[p].write((lo,), (hi - lo,), data[p][lo:hi])
                    if w == 0:
                        for p in small:
                            sets[p].write((0,), (len(data[p]),), data[p])

                with meter.phase():
                    jobs = [ex.submit(write, w, lo, hi)
                            for w, (lo, hi) in enumerate(_slices(ncells, spec.workers))]
                    for j in jobs:
                        j.result()
            version = f.version()
            f.persist()

            def verify(w, lo, hi):
                for p in cells:
                    _check(p, sets[p].read((lo,), (hi - lo,)), data[p][lo:hi].tobytes())
                if w == 0:
                    for p in small:
                        _check(p, sets[p].read(), data[p].tobytes())

            with meter.phase():
                jobs = [ex.submit(verify, w, lo, hi)
                        for w, (lo, hi) in enumerate(_slices(ncells, spec.workers))]
                for j in jobs:
                    j.result()
            paths = tuple(f.walk())
    return meter.report(spec, version, generated, paths=paths)


def _leaves():
    for group, members in CLAMR_TREE.items():
        for name, info in members.items():
            yield f"/{group}/{name}", info


# -- legion ------------------------------------------------------------------

def run_legion(spec: WorkloadSpec, pool: Pool | None = None) -> RunReport:
    spec.validate()
    pool = _pool(spec, pool)
    meter = _Meter(pool)
    name = _prefix(pool, "legion")
    f = HierFile.create(pool, name, auto=False)
    dims = (spec.elements,)
    with f.transaction():
        f.root.dataset_create("region", dims, 8, spec.layout_for(dims))
    data = np.random.default_rng([spec.seed, 0]).random(spec.elements)
    order = np.random.default_rng([spec.seed, 1])
    parts = _slices(spec.elements, spec.subregions)
    files = [HierFile(pool.container_open(name, "rw"), auto=False) for _ in range(spec.workers)]
    regions = [wf.get("/region") for wf in files]
    for r in regions:
        r.refresh()  # describe outside the measured phase
    base = f.handle.next_tx()

    def write(w, k):
        lo, hi = parts[k]
        tx = files[w].handle.tx_start(base + k)
        with files[w].attach(tx):
            regions[w].write((lo,), (hi - lo,), data[lo:hi])
        return tx

    def read(w, k):
        lo, hi = parts[k]
        _check(f"subregion {k}", regions[w].read((lo,), (hi - lo,)), data[lo:hi].tobytes())

    with ThreadPoolExecutor(spec.workers) as ex, meter.phase():
        previous = []
        for r0 in range(0, spec.subregions, spec.workers):
            batch = list(range(r0, min(r0 + spec.workers, spec.subregions)))
            txs = list(ex.map(write, range(len(batch)), batch))
            # the previous round's read phase overlaps this round's open writes
            list(ex.map(read, range(len(previous)), previous))
            for i in order.permutation(len(txs)):
                txs[i].finish()
            previous = batch
        list(ex.map(read, range(len(previous)), previous))
    version = f.version()
    f.persist()
    return meter.report(spec, version, data.nbytes)


# -- pio ---------------------------------------------------------------------

def pio_decomposition(spec: WorkloadSpec):
    """Row blocks of each compute task and the I/O task(s) each one feeds.

    Returns ``(blocks, io_ranges, routes)``: ``routes[t]`` lists the
    ``(io_task, lo, hi)`` row pieces compute task ``t`` sends.
    """
    ntasks, nio, nrows = spec.workers, spec.niotasks, spec.dims[0]
    rng = np.random.default_rng([spec.seed, 2])
    cuts = sorted(rng.choice(np.arange(1, nrows), ntasks - 1, replace=False).tolist())
    edges = [0] + cuts + [nrows]
    blocks = list(zip(edges[:-1], edges[1:]))
    if ntasks == nio:
        return blocks, blocks, [[(t, lo, hi)] for t, (lo, hi) in enumerate(blocks)]
    if spec.method == "subset":
        groups = [t * nio // ntasks for t in range(ntasks)]
        io_ranges = []
        for j in range(nio):
            mine = [blocks[t] for t in range(ntasks) if groups[t] == j]
            io_ranges.append((mine[0][0], mine[-1][1]))
        routes = [[(groups[t], lo, hi)] for t, (lo, hi) in enumerate(blocks)]
        return blocks, io_ranges, routes
    io_ranges = _slices(nrows, nio)
    routes = []
    for lo, hi in blocks:
        routes.append([(j, max(lo, a), min(hi, b)) for j, (a, b) in enumerate(io_ranges)
                       if max(lo, a) < min(hi, b)])
    return blocks, io_ranges, routes


def run_pio(spec: WorkloadSpec, pool: Pool | None = None) -> RunReport:
    spec.validate()
    pool = _pool(spec, pool)
    meter = _Meter(pool)
    dims = tuple(spec.dims)
    rng = np.random.default_rng([spec.seed, 3])
    full = {
        "ints": rng.integers(-(1 << 30), 1 << 30, dims).astype("i4"),
        "reals": rng.standard_normal(dims).astype("f4"),
        "doubles": rng.standard_normal(dims),
    }
    blocks, io_ranges, routes = pio_decomposition(spec)
    # what each compute task holds before rearrangement
    local = [{v: full[v][lo:hi] for v, _ in PIO_VARS} for lo, hi in blocks]
    inbox = [[] for _ in io_ranges]
    for t, pieces in enumerate(routes):
        lo_t = blocks[t][0]
        for j, lo, hi in pieces:
            inbox[j].append((lo, {v: local[t][v][lo - lo_t:hi - lo_t] for v, _ in PIO_VARS}))
    messages = sum(len(p) for p in routes)

    nc = NcFile.create(pool, _prefix(pool, "pio"))
    dim_names = [f"d{i}" for i in range(len(dims))]
    for d, n in zip(dim_names, dims):
        nc.def_dim(d, n)
    layout = spec.layout_for(dims)
    variables = {v: nc.def_var(v, dim_names, np.dtype(t).itemsize, layout) for v, t in PIO_VARS}
    for var in variables.values():
        var.shape()  # warm the dimension cache outside the measured phase
    rest = dims[1:]

    def write(j):
        lo, hi = io_ranges[j]
        msgs = sorted(inbox[j], key=lambda m: m[0])
        for v, _ in PIO_VARS:
            buf = np.concatenate([m[1][v] for m in msgs])
            variables[v].put_vara((lo,) + (0,) * len(rest), (hi - lo,) + rest, buf)

    def read(j):
        lo, hi = io_ranges[j]
        return {v: np.frombuffer(variables[v].get_vara((lo,) + (0,) * len(rest),
                                                        (hi - lo,) + rest), dtype=t)
                .reshape((hi - lo,) + rest) for v, t in PIO_VARS}

    with ThreadPoolExecutor(len(io_ranges)) as ex:
        with nc.transaction(), meter.phase():
            list(ex.map(write, range(len(io_ranges))))
        with meter.phase():
            back = list(ex.map(read, range(len(io_ranges))))
    # scatter back to the compute tasks and compare every element
    for t, pieces in enumerate(routes):
        lo_t = blocks[t][0]
        for j, lo, hi in pieces:
            a = io_ranges[j][0]
            for v, _ in PIO_VARS:
                got = back[j][v][lo - a:hi - a]
                if got.tobytes() != local[t][v][lo - lo_t:hi - lo_t].tobytes():
                    raise VerificationFailed(f"task {t} variable {v} rows {lo}:{hi}")
    version = nc.version()
    nc.persist()
    generated = sum(a.nbytes for a in full.values())
    return meter.report(spec, version, generated, messages=messages)


# -- dispatch ----------------------------------------------------------------

def _pool(spec: WorkloadSpec, pool: Pool | None) -> Pool:
    if pool is None:
        return pool_create(spec.targets)
    if pool.cluster.n_targets != spec.targets:
        raise ConfigError(f"pool has {pool.cluster.n_targets} targets, workload asks for "
                          f"{spec.targets}")
    return pool


RUNNERS = {"clamr": run_clamr, "legion": run_legion, "pio": run_pio}


def run_workload(spec: WorkloadSpec, pool: Pool | None = None) -> RunReport:
    spec.validate()
    return RUNNERS[spec.kind](spec, pool)
