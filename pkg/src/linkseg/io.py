"""Bit-exact binary file formats and dataset directory layout.

Tensor file ("LTNS"): magic, version u8 (=1), dtype u8 (0 = real32,
1 = int32), rank u8, reserved u8 (=0), rank x u64 dims, then the
row-major little-endian payload.

Checkpoint file ("LKPT"): magic, version u8 (=1), record count u32, then
records of (path length u16, utf-8 path, embedded tensor file). Paths are
unique and stored sorted, so round trips are byte-identical.

All multi-byte integers are little-endian. Malformed input raises
FileFormatError naming the byte offset and the field being parsed.
"""
import os
import struct

import numpy as np

TENSOR_MAGIC = b"LTNS"
CHECKPOINT_MAGIC = b"LKPT"
FORMAT_VERSION = 1

_DTYPE_CODE = {np.dtype("<f4"): 0, np.dtype("<i4"): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<i4")}

_MAX_RANK = 8


class FileFormatError(ValueError):
    """Malformed file; message carries byte offset and field name."""

    def __init__(self, offset, field, detail):
        self.offset = offset
        self.field = field
        super().__init__(f"byte {offset}, field {field!r}: {detail}")


def _dtype_code(arr):
    dt = arr.dtype.newbyteorder("<")
    code = _DTYPE_CODE.get(dt)
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}; only real32 and int32 are stored")
    return code


def tensor_bytes(arr):
    """Serialize one array to the tensor wire format."""
    arr = np.asarray(arr)
    if arr.ndim < 1:
        arr = arr.reshape(1)
    if arr.ndim > _MAX_RANK:
        raise ValueError(f"rank {arr.ndim} exceeds the format limit of {_MAX_RANK}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"all dims must be >= 1, got shape {arr.shape}")
    code = _dtype_code(arr)
    head = TENSOR_MAGIC + struct.pack("<BBBB", FORMAT_VERSION, code, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return head + dims + payload


def read_tensor_from(buf, offset=0, where=""):
    """Parse one tensor record from ``buf`` at ``offset``; returns (array, end)."""

    def need(n, field):
        if offset + n > len(buf):
            raise FileFormatError(offset, where + field,
                                  f"need {n} bytes, only {len(buf) - offset} remain")

    need(4, "magic")
    magic = buf[offset:offset + 4]
    if magic != TENSOR_MAGIC:
        raise FileFormatError(offset, where + "magic",
                              f"expected {TENSOR_MAGIC!r}, found {bytes(magic)!r}")
    offset += 4
    need(4, "header")
    version, code, rank, reserved = struct.unpack_from("<BBBB", buf, offset)
    if version != FORMAT_VERSION:
        raise FileFormatError(offset, where + "version",
                              f"unknown version {version} (supported: {FORMAT_VERSION})")
    if code not in _CODE_DTYPE:
        raise FileFormatError(offset + 1, where + "dtype", f"unknown dtype code {code}")
    if rank < 1 or rank > _MAX_RANK:
        raise FileFormatError(offset + 2, where + "rank", f"rank {rank} outside [1, {_MAX_RANK}]")
    if reserved != 0:
        raise FileFormatError(offset + 3, where + "reserved", f"must be 0, found {reserved}")
    offset += 4
    need(8 * rank, "dims")
    dims = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    if any(d < 1 for d in dims):
        raise FileFormatError(offset - 8 * rank, where + "dims", f"zero-sized dim in {dims}")
    count = 1
    for d in dims:
        count *= d
    dtype = _CODE_DTYPE[code]
    nbytes = count * dtype.itemsize
    if nbytes > len(buf) - offset:
        raise FileFormatError(offset, where + "payload",
                              f"need {nbytes} bytes for {dims}, only {len(buf) - offset} remain")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims)
    offset += nbytes
    return arr.copy(), offset


def write_tensor(path, arr):
    data = tensor_bytes(arr)
    with open(path, "wb") as fh:
        fh.write(data)


def read_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = read_tensor_from(buf, 0)
    if end != len(buf):
        raise FileFormatError(end, "trailing", f"{len(buf) - end} unexpected extra bytes")
    return arr


def write_checkpoint(path, store):
    """Write a mapping of parameter path -> array, sorted by path."""
    keys = sorted(store)
    if len(keys) != len(store):
        raise ValueError("duplicate keys in store")
    if len(keys) > 0xFFFFFFFF:
        raise ValueError("too many records")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<BI", FORMAT_VERSION, len(keys))]
    for key in keys:
        enc = key.encode("utf-8")
        if len(enc) > 0xFFFF:
            raise ValueError(f"key too long: {key[:40]}...")
        chunks.append(struct.pack("<H", len(enc)))
        chunks.append(enc)
        chunks.append(tensor_bytes(store[key]))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    offset = 0
    if len(buf) < 4 or buf[:4] != CHECKPOINT_MAGIC:
        raise FileFormatError(0, "magic",
                              f"expected {CHECKPOINT_MAGIC!r}, found {bytes(buf[:4])!r}")
    offset = 4
    if len(buf) < offset + 5:
        raise FileFormatError(offset, "header", "truncated checkpoint header")
    version, count = struct.unpack_from("<BI", buf, offset)
    if version != FORMAT_VERSION:
        raise FileFormatError(offset, "version",
                              f"unknown version {version} (supported: {FORMAT_VERSION})")
    offset += 5
    store = {}
    prev = None
    for rec in range(count):
        if offset + 2 > len(buf):
            raise FileFormatError(offset, f"record[{rec}].path_len", "truncated record")
        (plen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        if offset + plen > len(buf):
            raise FileFormatError(offset, f"record[{rec}].path", "truncated path")
        try:
            key = buf[offset:offset + plen].decode("utf-8")
        except UnicodeDecodeError as err:
            raise FileFormatError(offset, f"record[{rec}].path", f"bad utf-8: {err}") from None
        offset += plen
        if prev is not None and key <= prev:
            raise FileFormatError(offset, f"record[{rec}].path",
                                  f"paths not sorted/unique: {key!r} after {prev!r}")
        prev = key
        arr, offset = read_tensor_from(buf, offset, where=f"record[{rec}].")
        store[key] = arr
    if offset != len(buf):
        raise FileFormatError(offset, "trailing", f"{len(buf) - offset} unexpected extra bytes")
    return store


def save_dataset(dirpath, samples):
    """Lay out samples as images/NNNN.ltn, labels/NNNN.ltn, instances/NNNN.ltn."""
    os.makedirs(os.path.join(dirpath, "images"), exist_ok=True)
    os.makedirs(os.path.join(dirpath, "labels"), exist_ok=True)
    with_inst = any(s.instances is not None for s in samples)
    if with_inst:
        os.makedirs(os.path.join(dirpath, "instances"), exist_ok=True)
    for i, s in enumerate(samples):
        name = f"{i:04d}.ltn"
        write_tensor(os.path.join(dirpath, "images", name), s.image)
        write_tensor(os.path.join(dirpath, "labels", name), s.labels)
        if with_inst:
            if s.instances is None:
                raise ValueError(f"sample {i} lacks an instance map but others have one")
            write_tensor(os.path.join(dirpath, "instances", name), s.instances)


def load_dataset(dirpath):
    """Read a dataset directory back into Sample records (sorted by filename)."""
    from .train import Sample

    img_dir = os.path.join(dirpath, "images")
    lab_dir = os.path.join(dirpath, "labels")
    inst_dir = os.path.join(dirpath, "instances")
    if not os.path.isdir(img_dir) or not os.path.isdir(lab_dir):
        raise FileNotFoundError(f"{dirpath} lacks images/ and labels/ subdirectories")
    names = sorted(n for n in os.listdir(img_dir) if n.endswith(".ltn"))
    if not names:
        raise FileNotFoundError(f"no .ltn files under {img_dir}")
    has_inst = os.path.isdir(inst_dir)
    samples = []
    for name in names:
        image = read_tensor(os.path.join(img_dir, name))
        labels = read_tensor(os.path.join(lab_dir, name))
        inst = read_tensor(os.path.join(inst_dir, name)) if has_inst else None
        samples.append(Sample(image=image, labels=labels, instances=inst))
    return samples
