import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daosim.arraync import UNLIMITED, NcFile, namespace_problems
from daosim.container import Pool, pool_create
from daosim.errors import (
    CollectiveRequired,
    NameExists,
    NotFound,
    OutOfBounds,
    SizeMismatch,
    UnknownDimension,
    UnlimitedNotSlowest,
)
from daosim.hier import Chunked


@pytest.fixture
def nc():
    return NcFile.create(pool_create(4), "nc")


def raw_dim(nc, name):
    return int.from_bytes(nc.h.get(f"/DIM_{name}").read().data, "little")


def test_def_dim_fixed(nc):
    nc.def_dim("x", 10)
    assert raw_dim(nc, "x") == 10
    assert nc.dim("x").length == 10 and not nc.dim("x").unlimited


def test_def_dim_unlimited_sentinel(nc):
    nc.def_dim("time", UNLIMITED)
    assert raw_dim(nc, "time") == 0xFFFFFFFFFFFFFFFF
    assert nc.dim("time").unlimited


def test_dim_errors(nc):
    nc.def_dim("x", 3)
    with pytest.raises(NameExists):
        nc.def_dim("x", 4)
    with pytest.raises(ValueError):
        nc.def_dim("y", 0)
    with pytest.raises(UnknownDimension):
        nc.dim("nope")


def test_coordinate_variable_coexists(nc):
    nc.def_dim("x", 4)
    v = nc.def_var("x", ["x"], 8)
    coords = np.arange(4, dtype="f8")
    v.put_vara((0,), (4,), coords)
    assert nc.dim("x").length == 4
    assert np.array_equal(v.get_array("f8"), coords)
    assert {"/DIM_x", "/VAR_x"} <= set(nc.h.walk())


def test_def_var_shapes(nc):
    nc.def_dim("time", UNLIMITED)
    nc.def_dim("x", 4)
    v = nc.def_var("v", ["time", "x"], 4)
    assert v.shape() == (0, 4)
    assert v.inq_dims() == [("time", 0, True), ("x", 4, False)]
    assert v.dim_paths() == ["/DIM_time", "/DIM_x"]
    with pytest.raises(UnlimitedNotSlowest):
        nc.def_var("w", ["x", "time"], 4)
    with pytest.raises(UnknownDimension):
        nc.def_var("w", ["x", "nope"], 4)
    with pytest.raises(NameExists):
        nc.def_var("v", ["x"], 4)


def test_scalar_variable(nc):
    v = nc.def_var("s", [], 8)
    assert v.inq_dims() == []
    v.put_vara((), (), np.float64(2.5).tobytes())
    assert np.frombuffer(v.get_vara(), "f8")[0] == 2.5


def test_unlimited_growth(nc):
    nc.def_dim("time", UNLIMITED)
    nc.def_dim("x", 4)
    v = nc.def_var("v", ["time", "x"], 1)
    with nc.transaction():
        v.put_vara((0, 0), (2, 4), b"ABCDEFGH")
    with nc.transaction():
        v.put_vara((2, 0), (2, 4), b"IJKLMNOP")
    assert v.get_vara((0, 0), (4, 4)) == b"ABCDEFGHIJKLMNOP"
    assert v.inq_dims() == [("time", 4, True), ("x", 4, False)]
    with pytest.raises(OutOfBounds):
        v.get_vara((4, 0), (1, 4))


def test_growth_needs_collective_transaction(nc):
    nc.def_dim("time", UNLIMITED)
    v = nc.def_var("v", ["time"], 1)
    with pytest.raises(CollectiveRequired):
        v.put_vara((0,), (1,), b"a")
    assert v.current_length() == 0
    with nc.transaction():
        v.put_vara((0,), (3,), b"abc")
    # writes inside the current length need no transaction
    v.put_vara((1,), (1,), b"B")
    assert v.get_vara() == b"aBc"


def test_fixed_bounds(nc):
    nc.def_dim("x", 4)
    v = nc.def_var("v", ["x"], 2)
    with pytest.raises(OutOfBounds):
        v.put_vara((3,), (2,), bytes(4))
    with pytest.raises(SizeMismatch):
        v.put_vara((0,), (2,), bytes(3))


def test_growth_visible_only_after_commit():
    pool = pool_create(2)
    nc = NcFile.create(pool, "g")
    nc.def_dim("t", UNLIMITED)
    v = nc.def_var("v", ["t"], 1)
    with nc.transaction():
        v.put_vara((0,), (2,), b"ab")
    v2 = nc.h.version()
    with nc.transaction():
        v.put_vara((2,), (2,), b"cd")
    nc.read_version = v2
    assert v.shape() == (2,)
    with pytest.raises(OutOfBounds):
        v.get_vara((2,), (1,))
    nc.read_version = None
    assert v.get_vara() == b"abcd"


def test_second_handle_sees_growth():
    pool = pool_create(2)
    nc = NcFile.create(pool, "g")
    nc.def_dim("t", UNLIMITED)
    v = nc.def_var("v", ["t"], 1)
    other = NcFile(type(nc.h)(pool.container_open("g", "rw"))).var("v")
    assert other.shape() == (0,)
    with nc.transaction():
        v.put_vara((0,), (5,), b"hello")
    assert other.get_vara() == b"hello"


def test_attributes(nc):
    nc.def_dim("x", 2)
    v = nc.def_var("v", ["x"], 1)
    v.put_att("units", "m")
    nc.put_att("title", b"demo")
    assert v.get_att("units") == b"m"
    assert nc.get_att("title") == b"demo"
    assert v.inq_atts() == ["units"]
    assert nc.inq_atts() == ["title"]
    assert "ATT_units" in v.ds.attr_names()
    with pytest.raises(NotFound):
        v.get_att("absent")
    with pytest.raises(ValueError):
        v.put_att("_hidden", b"")


def test_dimension_list_hidden(nc):
    nc.def_dim("time", UNLIMITED)
    v = nc.def_var("v", ["time"], 1)
    names = v.ds.attr_names()
    assert "DIMENSION_LIST" in names and "ATT__cur0" in names
    assert v.inq_atts() == []
    assert json.loads(v.ds.attr_read("DIMENSION_LIST")) == ["/DIM_time"]


def build_file(nc):
    nc.def_dim("time", UNLIMITED)
    nc.def_dim("x", 4)
    nc.def_dim("y", 3)
    nc.put_att("title", "fixture")
    x = nc.def_var("x", ["x"], 8)
    x.put_vara((0,), (4,), np.linspace(0, 1, 4))
    x.put_att("units", "m")
    t = nc.def_var("temp", ["time", "y", "x"], 4, Chunked((1, 3, 2)))
    with nc.transaction():
        t.put_vara((0, 0, 0), (3, 3, 4), np.arange(36, dtype="f4"))
    return t


def test_namespace_scan_clean(nc):
    build_file(nc)
    assert namespace_problems(nc) == []
    assert set(nc.h.walk()) == {"/DIM_time", "/DIM_x", "/DIM_y", "/VAR_x", "/VAR_temp"}


def test_namespace_scan_flags_foreign_names(nc):
    build_file(nc)
    nc.h.root.group_create("loose")
    nc.h.get("/VAR_x").attr_write("plain", b"")
    problems = namespace_problems(nc)
    assert any("/loose" in p for p in problems)
    assert any("@plain" in p for p in problems)


def test_persist_reload_roundtrip(tmp_path):
    pool = pool_create(3, tmp_path)
    nc = NcFile.create(pool, "rt")
    t = build_file(nc)
    before = (t.get_vara(), t.inq_dims(), nc.var("x").get_vara())
    nc.persist()
    again = NcFile.open(Pool.load(tmp_path), "rt")
    t2 = again.var("temp")
    assert (t2.get_vara(), t2.inq_dims(), again.var("x").get_vara()) == before
    assert namespace_problems(again) == []


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(1, 5)), min_size=1, max_size=8),
       st.integers(0, 2**32))
def test_growth_monotone_and_dense_oracle(writes, seed):
    rng = np.random.default_rng(seed)
    nc = NcFile.create(pool_create(3), "p")
    nc.def_dim("t", UNLIMITED)
    nc.def_dim("x", 3)
    v = nc.def_var("v", ["t", "x"], 2)
    dense = np.zeros((0, 3, 2), dtype=np.uint8)
    versions = []
    for start, count in writes:
        block = rng.integers(0, 256, size=(count, 3, 2), dtype=np.uint8)
        with nc.transaction():
            v.put_vara((start, 0), (count, 3), block.tobytes())
        if start + count > len(dense):
            dense = np.concatenate([dense, np.zeros((start + count - len(dense), 3, 2), np.uint8)])
        dense[start:start + count] = block
        versions.append(nc.version())
    lengths = []
    for ver in versions:
        nc.read_version = ver
        lengths.append(v.current_length())
    nc.read_version = None
    assert lengths == sorted(lengths)
    assert lengths[-1] == len(dense)
    assert v.get_vara() == dense.tobytes()
