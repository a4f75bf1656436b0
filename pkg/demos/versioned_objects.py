"""Versioned objects: write in numbered transactions, read any committed version.

Run with ``python demos/versioned_objects.py``.
"""

from daosim import Extent, ObjectId, pool_create

pool = pool_create(4)
pool.container_create("demo")
h = pool.container_open("demo")

# class 1 objects stripe their dkeys across targets
oid = ObjectId.make(1, 7)

with h.tx_start(1) as tx:
    tx.update(oid, "row0", "payload", 0, b"hello world")
with h.tx_start(2) as tx:
    tx.update(oid, "row0", "payload", 6, b"epoch")

# transaction 4 finishes before 3: nothing past version 2 is visible yet
tx4 = h.tx_start(4)
tx4.update(oid, "row1", "payload", 0, b"late")
tx4.finish()
print("version after finishing 4 first:", h.version())

with h.tx_start(3) as tx:
    tx.punch(oid, "row0")
print("version after finishing 3:", h.version())

for v in range(1, h.version() + 1):
    got = h.read_at(v, oid, "row0", "payload", Extent(0, 11))
    print(f"v{v}: row0={got.data!r} complete={got.complete}")

print("row1 at v4:", h.read_at(4, oid, "row1", "payload", Extent(0, 4)).data)
print("keys at v2:", h.list_at(2, oid))
