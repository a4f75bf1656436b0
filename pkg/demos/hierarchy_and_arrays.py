"""Groups, datasets and NetCDF-style variables on top of the object store."""

import numpy as np

from daosim import pool_create
from daosim.arraync import UNLIMITED, NcFile
from daosim.hier import Chunked, HierFile

pool = pool_create(8)

# a small hierarchy with a chunked 2-D dataset
f = HierFile.create(pool, "tree")
mesh = f.root.group_create("mesh")
grid = mesh.dataset_create("H", (64, 64), 8, Chunked((16, 16)))
values = np.arange(64 * 64, dtype="f8").reshape(64, 64)
grid.write((0, 0), (64, 64), values.tobytes())
corner = grid.read((8, 8), (16, 16)).array("f8").reshape(16, 16)
print("corner matches:", np.array_equal(corner, values[8:24, 8:24]))
print("paths:", f.walk())

# an array file with a growable record dimension
nc = NcFile.create(pool, "series")
nc.def_dim("time", UNLIMITED)
nc.def_dim("x", 4)
temp = nc.def_var("temp", ["time", "x"], 4)
temp.put_att("units", "K")

for step in range(3):
    row = np.full((1, 4), 270 + step, dtype="f4")
    # growing the record dimension is a collective act: it needs a transaction
    with nc.transaction():
        temp.put_vara((step, 0), (1, 4), row.tobytes())

print("dims:", temp.inq_dims())
print(temp.get_array("f4"))
print("units:", temp.get_att("units").decode())
