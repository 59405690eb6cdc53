"""Writes golden_3x8.pvpe and its label sidecar with struct, not the C++ writer."""
import math
import pathlib
import struct

here = pathlib.Path(__file__).resolve().parent
rows = [
    [1.0] + [0.0] * 7,
    [1.0 / math.sqrt(8.0)] * 8,
    [(1.0 if i % 2 == 0 else -1.0) / math.sqrt(8.0) for i in range(8)],
]
labels = ["dog", "traffic light", "person"]

header = b"PVPE" + struct.pack("<III", 1, len(rows), 8) + struct.pack("<B", 0) + bytes(7)
payload = b"".join(struct.pack("<8f", *r) for r in rows)
(here / "golden_3x8.pvpe").write_bytes(header + payload)
(here / "golden_3x8.pvpe.labels").write_text("".join(l + "\n" for l in labels), encoding="utf-8")
