"""Dataset readers/writers (IDX, embedding files) and results persistence."""

import csv
import gzip
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import BadMagic, CountMismatch, FormatError, LabelOutOfRange, Truncated

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
EMB_MAGIC = b"SDMEMB1\n"
_EMB_HEADER = struct.Struct("<3I")


@dataclass
class LabeledDataset:
    features: np.ndarray  # samples x dim
    labels: np.ndarray
    num_classes: int
    normalization: str = "none"  # "none" or "l2"
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise CountMismatch("features must be (samples, dim) with one label per sample")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, mask_or_idx, note=""):
        return LabeledDataset(
            self.features[mask_or_idx],
            self.labels[mask_or_idx],
            self.num_classes,
            self.normalization,
            f"{self.provenance}{note}",
        )

    def with_classes(self, classes):
        mask = np.isin(self.labels, list(classes))
        return self.subset(mask, f"[classes={','.join(map(str, classes))}]")

    def head(self, count):
        return self.subset(slice(0, count), f"[:{count}]")

    def astype(self, dtype):
        return LabeledDataset(self.features.astype(dtype), self.labels, self.num_classes, self.normalization, self.provenance)


def l2_normalized(ds):
    """Per-sample L2 normalization; a no-op on data already normalized."""
    if ds.normalization == "l2":
        return ds
    feats = numerics.normalize_rows(ds.features.astype(np.float64)).astype(ds.features.dtype)
    return LabeledDataset(feats, ds.labels, ds.num_classes, "l2", f"{ds.provenance}|l2")


def rescale_for_display(x):
    """Min-subtract and max-divide so weights can be shown as images."""
    x = np.asarray(x, dtype=float)
    x = x - x.min()
    top = x.max()
    return x / top if top > 0 else x


# -- IDX --------------------------------------------------------------------


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_array(blob, magic, what):
    if len(blob) < 8:
        raise Truncated(f"{what} header is truncated")
    (found,) = struct.unpack_from(">I", blob, 0)
    if found != magic:
        raise BadMagic(f"{what}: expected magic {magic:#010x}, found {found:#010x}")
    ndim = magic & 0xFF
    if len(blob) < 4 + 4 * ndim:
        raise Truncated(f"{what} header is truncated")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    start = 4 + 4 * ndim
    size = int(np.prod(dims))
    if len(blob) - start < size:
        raise Truncated(f"{what}: expected {size} payload bytes, found {len(blob) - start}")
    if len(blob) - start > size:
        raise FormatError(f"{what}: trailing bytes after payload")
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=start).reshape(dims)


def parse_idx(images_path, labels_path, num_classes=10):
    """Load an IDX image/label pair; pixels scaled to [0, 1] and flattened row-major."""
    images = _idx_array(_read_bytes(images_path), IDX_IMAGES_MAGIC, "images")
    labels = _idx_array(_read_bytes(labels_path), IDX_LABELS_MAGIC, "labels")
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    feats = images.reshape(len(images), -1).astype(np.float32) / 255.0
    if len(labels) and labels.max() >= num_classes:
        raise LabelOutOfRange(f"label {labels.max()} outside [0, {num_classes})")
    return LabeledDataset(feats, labels.astype(np.int64), num_classes, "none", f"idx:{images_path}")


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (count x rows x cols) and labels in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *images.shape) + images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(root, split):
    """Locate an IDX pair under ``root`` (plain or .gz)."""
    names = MNIST_FILES[split]
    found = []
    for name in names:
        for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
            path = os.path.join(root, candidate)
            if os.path.exists(path):
                found.append(path)
                break
        else:
            raise FileNotFoundError(f"{name} not found under {root}")
    return tuple(found)


def load_mnist(root, split="train"):
    return parse_idx(*find_idx_pair(root, split))


# -- embeddings --------------------------------------------------------------


def write_embeddings(ds, path):
    feats = np.ascontiguousarray(ds.features, dtype="<f4")
    labels = np.ascontiguousarray(ds.labels, dtype="<u4")
    count, dim = feats.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC + _EMB_HEADER.pack(count, dim, ds.num_classes) + feats.tobytes() + labels.tobytes())


def parse_embeddings(path):
    blob = _read_bytes(path)
    if not blob.startswith(EMB_MAGIC):
        raise BadMagic("not an SDMEMB1 embedding file")
    offset = len(EMB_MAGIC)
    if len(blob) < offset + _EMB_HEADER.size:
        raise Truncated("embedding header is truncated")
    count, dim, num_classes = _EMB_HEADER.unpack_from(blob, offset)
    offset += _EMB_HEADER.size
    feat_bytes = count * dim * 4
    if len(blob) < offset + feat_bytes:
        raise Truncated("embedding feature block is truncated")
    feats = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset).reshape(count, dim)
    offset += feat_bytes
    if len(blob) < offset + count * 4:
        raise Truncated("embedding label block is truncated")
    labels = np.frombuffer(blob, dtype="<u4", count=count, offset=offset)
    offset += count * 4
    if offset != len(blob):
        raise FormatError("trailing bytes after embedding payload")
    if count and labels.max() >= num_classes:
        raise LabelOutOfRange(f"label {labels.max()} outside [0, {num_classes})")
    return LabeledDataset(feats.astype(np.float32), labels.astype(np.int64), num_classes, "none", f"emb:{path}")


# -- results -----------------------------------------------------------------


def atomic_write_text(path, text):
    """Write ``text`` to a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_results(log, path, summary=None):
    """Persist ``log`` as JSON lines at ``path`` plus ``<stem>.summary.json``.

    Returns the summary path.
    """
    lines = [json.dumps(rec, default=_jsonable, sort_keys=True) for rec in log.records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    summary = dict(summary if summary is not None else log.summary())
    summary.setdefault("records", len(log.records))
    summary_path = summary_path_for(path)
    atomic_write_text(summary_path, json.dumps(summary, default=_jsonable, indent=2, sort_keys=True) + "\n")
    return summary_path


def summary_path_for(path):
    stem = path[: -len(".jsonl")] if path.endswith(".jsonl") else path
    return stem + ".summary.json"


def read_results(path):
    """Return ``(records, summary)`` written by :func:`write_results`."""
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    with open(summary_path_for(path)) as fh:
        summary = json.load(fh)
    return records, summary


def write_csv(path, header, rows):
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        return header, list(reader)
