"""Kernel throughput and memory-footprint benchmarks.

Measures wall-clock medians for the packed 1-bit convolution against the
full-precision reference on identical geometry, plus the byte footprint of
packed vs dense operands. Reference numbers are single-threaded; an optional
multi-thread column (capped by BIDRN_THREADS) is labeled separately.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import binary, tensor

SIZE_PRESETS = {
    "small": [
        # (c_in, c_out, k, h, w, stride)
        (8, 8, 3, 16, 16, 1),
        (16, 16, 3, 16, 16, 1),
        (32, 32, 3, 14, 14, 1),
        (64, 64, 3, 8, 8, 1),
    ],
    "medium": [
        (32, 32, 3, 28, 28, 1),
        (64, 64, 3, 28, 28, 2),
        (128, 128, 3, 14, 14, 1),
        (256, 256, 3, 7, 7, 1),
    ],
}


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("BIDRN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class BenchRow:
    geometry: str
    reduction_len: int
    packed_ms: float
    reference_ms: float
    packed_ms_mt: float
    packed_bytes: int
    dense_bytes: int
    checksum: str
    total_macs: int


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000)
    return float(np.median(times))


def bench_conv(shapes, reps: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    rows = []
    for c_in, c_out, k, h, w, stride in shapes:
        x = rng.standard_normal((1, c_in, h, w)).astype(np.float32)
        p = binary.BinaryConv2dParams.create(c_out, c_in, k, stride=stride,
                                             padding=k // 2, rng=rng)
        wq = binary.binarize_weights(p)

        outputs = []

        def packed():
            outputs.append(binary.binary_conv2d(x, p))

        def reference():
            tensor.conv2d_reference(x, wq, stride, k // 2)

        packed_ms = _median_time(packed, reps)
        reference_ms = _median_time(reference, reps)

        workers = thread_cap()
        if workers > 1:
            chunks = np.array_split(np.arange(c_out), workers)

            def packed_mt():
                def run(idx):
                    sub = binary.BinaryConv2dParams(
                        latent_weights=type(p.latent_weights)(
                            p.latent_weights.data[idx]),
                        alpha=p.alpha[idx], stride=p.stride, padding=p.padding,
                        frozen=True)
                    return binary.binary_conv2d(x, sub)
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    list(pool.map(run, [c for c in chunks if len(c)]))
            packed_ms_mt = _median_time(packed_mt, reps)
        else:
            packed_ms_mt = packed_ms

        cols = tensor.im2col(x, k, k, stride, k // 2)
        packed_rows = binary.pack_signs(cols)
        dense_bytes = cols.size * 4
        checksums = {hashlib.sha256(np.ascontiguousarray(o).tobytes()).hexdigest()[:16]
                     for o in outputs}
        oh = tensor.conv_out_extent(h, k, stride, k // 2)
        ow = tensor.conv_out_extent(w, k, stride, k // 2)
        rows.append(BenchRow(
            geometry=f"{c_in}x{c_out}x{k}x{h}x{w}s{stride}",
            reduction_len=c_in * k * k,
            packed_ms=packed_ms,
            reference_ms=reference_ms,
            packed_ms_mt=packed_ms_mt,
            packed_bytes=packed_rows.footprint_bytes,
            dense_bytes=dense_bytes,
            checksum=checksums.pop() if len(checksums) == 1 else "MISMATCH",
            total_macs=c_out * c_in * k * k * oh * ow,
        ))
    return rows


def report_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["geometry", "reduction_len", "packed_ms", "reference_ms",
                     "packed_ms_mt", "packed_bytes", "dense_bytes",
                     "footprint_ratio", "checksum", "total_macs"])
    for r in rows:
        writer.writerow([r.geometry, r.reduction_len, f"{r.packed_ms:.4f}",
                         f"{r.reference_ms:.4f}", f"{r.packed_ms_mt:.4f}",
                         r.packed_bytes, r.dense_bytes,
                         f"{r.dense_bytes / r.packed_bytes:.2f}",
                         r.checksum, r.total_macs])
    return buf.getvalue()
