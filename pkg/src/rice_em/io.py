"""Dataset and result files: UTF-8 CSV with a JSON header comment block.

Headers are single "# "-prefixed lines holding one sorted-key JSON object,
so files stay diffable and language-neutral.  Floats are written with
``repr`` (shortest round-trip form) and parsed back exactly.  Numbers
arriving with a decimal comma are normalized on ingest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .synth import AcquisitionScheme, GroundTruth, VoxelData
from .tensor import (
    TensorParams,
    coefficient_count,
    eigen_2nd_order,
    fractional_anisotropy,
    mean_diffusivity,
)

__all__ = [
    "ParseError",
    "DatasetFile",
    "ResultRow",
    "ResultFile",
    "parse_number",
    "format_float",
    "write_dataset",
    "read_dataset",
    "write_results",
    "read_results",
]

DATASET_FORMAT = "rice-em-dataset"
RESULTS_FORMAT = "rice-em-results"
FORMAT_VERSION = 1


class ParseError(ValueError):
    """File-format violation; the message carries the offending line number."""


@dataclass(frozen=True)
class DatasetFile:
    header: dict
    scheme: AcquisitionScheme
    voxels: list[VoxelData]
    truth: GroundTruth | None
    seed: int | None


@dataclass(frozen=True)
class ResultRow:
    voxel_id: int
    method: str
    order: int
    theta: np.ndarray
    s0_sq: float
    sigma_sq: float
    converged: bool
    iterations: int
    loglik: float | None
    fa: float | None
    md: float
    flags: tuple[str, ...]


@dataclass(frozen=True)
class ResultFile:
    header: dict
    scheme: AcquisitionScheme
    truth: GroundTruth | None
    method: str
    order: int
    rows: list[ResultRow]


def format_float(x: float) -> str:
    return repr(float(x))


def parse_number(text: str) -> float:
    """Float parse with decimal-comma normalization (93,0405 -> 93.0405)."""
    s = text.strip()
    try:
        return float(s)
    except ValueError:
        pass
    if s.count(",") == 1 and "." not in s:
        try:
            return float(s.replace(",", "."))
        except ValueError:
            pass
    raise ValueError(f"not a number: {text!r}")


def _scheme_to_json(scheme: AcquisitionScheme) -> dict:
    return {
        "knots": [float(b) for b in scheme.knots],
        "directions": [[float(c) for c in d] for d in scheme.directions],
        "repetitions": int(scheme.repetitions),
    }


def _scheme_from_json(obj) -> AcquisitionScheme:
    try:
        return AcquisitionScheme(
            knots=np.asarray(obj["knots"], dtype=float),
            directions=np.asarray(obj["directions"], dtype=float),
            repetitions=int(obj["repetitions"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad scheme block: {exc}") from None


def _truth_to_json(truth: GroundTruth) -> dict:
    return {
        "kind": "synthetic-fixture",
        "order": truth.theta_true.order,
        "theta": [float(t) for t in truth.theta_true.theta],
        "s0": float(truth.s0_true),
        "sigma_sq": float(truth.sigma_sq_true),
        "seed": int(truth.seed),
    }


def _truth_from_json(obj) -> GroundTruth:
    try:
        return GroundTruth(
            theta_true=TensorParams(int(obj["order"]), np.asarray(obj["theta"], dtype=float)),
            s0_true=float(obj["s0"]),
            sigma_sq_true=float(obj["sigma_sq"]),
            seed=int(obj["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad truth block: {exc}") from None


def _write_header(fh, header: dict) -> None:
    fh.write("# " + json.dumps(header, sort_keys=True) + "\n")


def _read_header(lines: list[str], expect_format: str, path: str) -> dict:
    if not lines or not lines[0].startswith("# "):
        raise ParseError(f"{path}: line 1: missing '# ' JSON header line")
    try:
        header = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line 1: bad JSON header: {exc}") from None
    if header.get("format") != expect_format:
        raise ParseError(
            f"{path}: line 1: format is {header.get('format')!r}, expected {expect_format!r}"
        )
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: line 1: unsupported version {header.get('version')!r}")
    return header


def write_dataset(
    path,
    scheme: AcquisitionScheme,
    voxels: Sequence[VoxelData],
    truth: GroundTruth | None = None,
    seed: int | None = None,
) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "scheme": _scheme_to_json(scheme),
        "truth": _truth_to_json(truth) if truth is not None else None,
        "seed": int(seed) if seed is not None else None,
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_header(fh, header)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["voxel_id", "acquisition_index", "magnitude"])
        for vox in voxels:
            if vox.y.size != scheme.size:
                raise ValueError(
                    f"voxel {vox.voxel_id} has {vox.y.size} rows, scheme expects {scheme.size}"
                )
            for i, val in enumerate(vox.y):
                writer.writerow([vox.voxel_id, i, format_float(val)])


def read_dataset(path) -> DatasetFile:
    path = str(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = _read_header(lines, DATASET_FORMAT, path)
    scheme = _scheme_from_json(header.get("scheme"))
    truth = _truth_from_json(header["truth"]) if header.get("truth") else None
    seed = header.get("seed")

    if len(lines) < 2 or lines[1].split(",") != ["voxel_id", "acquisition_index", "magnitude"]:
        raise ParseError(f"{path}: line 2: expected dataset column header")

    m = scheme.size
    voxels: list[VoxelData] = []
    seen: set[int] = set()
    current_id: int | None = None
    current_y: np.ndarray | None = None
    current_seen: np.ndarray | None = None

    def flush(line_no):
        if current_id is None:
            return
        if not current_seen.all():
            missing = int(np.argmin(current_seen))
            raise ParseError(
                f"{path}: line {line_no}: voxel {current_id} is missing acquisition {missing}"
            )
        voxels.append(VoxelData(voxel_id=current_id, y=current_y.copy()))

    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = next(csv.reader([line]))
        if len(parts) != 3:
            raise ParseError(f"{path}: line {line_no}: expected 3 fields, got {len(parts)}")
        try:
            vid = int(parts[0])
            acq = int(parts[1])
            mag = parse_number(parts[2])
        except ValueError as exc:
            raise ParseError(f"{path}: line {line_no}: {exc}") from None
        if not 0 <= acq < m:
            raise ParseError(
                f"{path}: line {line_no}: acquisition_index {acq} outside [0, {m})"
            )
        if not math.isfinite(mag) or mag < 0:
            raise ParseError(f"{path}: line {line_no}: magnitude must be finite and >= 0")
        if vid != current_id:
            if vid in seen:
                raise ParseError(
                    f"{path}: line {line_no}: voxel {vid} reappears; blocks must be contiguous"
                )
            flush(line_no)
            seen.add(vid)
            current_id = vid
            current_y = np.zeros(m)
            current_seen = np.zeros(m, dtype=bool)
        if current_seen[acq]:
            raise ParseError(
                f"{path}: line {line_no}: duplicate acquisition {acq} for voxel {vid}"
            )
        current_y[acq] = mag
        current_seen[acq] = True
    flush(len(lines) + 1)
    if not voxels:
        raise ParseError(f"{path}: no voxel records")
    return DatasetFile(header=header, scheme=scheme, voxels=voxels, truth=truth, seed=seed)


def _result_columns(order: int) -> list[str]:
    d = coefficient_count(order)
    return (
        ["voxel_id", "method", "order"]
        + [f"theta_{i}" for i in range(d)]
        + ["s0_sq", "sigma_sq", "converged", "iterations", "loglik", "fa", "md", "flags"]
    )


def _derived_scalars(theta: TensorParams) -> tuple[float | None, float]:
    # FA is an order-2 notion; the all-zero tensor has no principal frame
    fa = None
    if theta.order == 2 and not np.all(theta.theta == 0.0):
        fa = fractional_anisotropy(eigen_2nd_order(theta))
    return fa, mean_diffusivity(theta)


def write_results(
    path,
    scheme: AcquisitionScheme,
    reports: Sequence[tuple[int, object]],
    truth: GroundTruth | None = None,
) -> None:
    """Write one result file; all reports must share method and order.

    ``reports`` pairs each voxel id with its FitReport or BaselineReport.
    Rows are sorted by voxel id; worker scheduling and timing never reach
    the file, so reruns are byte-identical.
    """
    if not reports:
        raise ValueError("no reports to write")
    items = sorted(reports, key=lambda pair: pair[0])
    method = items[0][1].method
    order = items[0][1].order
    for _, rep in items:
        if rep.method != method or rep.order != order:
            raise ValueError("all reports in one file must share method and order")
    header = {
        "format": RESULTS_FORMAT,
        "version": FORMAT_VERSION,
        "scheme": _scheme_to_json(scheme),
        "truth": _truth_to_json(truth) if truth is not None else None,
        "method": method,
        "order": order,
    }
    d = coefficient_count(order)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_header(fh, header)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_result_columns(order))
        for vid, rep in items:
            theta = rep.theta.theta
            if theta.size != d:
                raise ValueError(f"voxel {vid}: theta has {theta.size} coefficients, want {d}")
            loglik = rep.loglik
            fa, md = _derived_scalars(rep.theta)
            row = (
                [vid, rep.method, rep.order]
                + [format_float(t) for t in theta]
                + [
                    format_float(rep.s0_sq),
                    format_float(rep.sigma_sq),
                    "true" if rep.converged else "false",
                    int(rep.iterations),
                    "" if loglik is None or (isinstance(loglik, float) and math.isnan(loglik)) else format_float(loglik),
                    "" if fa is None else format_float(fa),
                    format_float(md),
                    ";".join(rep.flags),
                ]
            )
            writer.writerow(row)


def read_results(path) -> ResultFile:
    path = str(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = _read_header(lines, RESULTS_FORMAT, path)
    scheme = _scheme_from_json(header.get("scheme"))
    truth = _truth_from_json(header["truth"]) if header.get("truth") else None
    method = header.get("method")
    order = header.get("order")
    if order not in (2, 4):
        raise ParseError(f"{path}: line 1: order must be 2 or 4, got {order!r}")
    columns = _result_columns(order)
    if len(lines) < 2 or lines[1].split(",") != columns:
        raise ParseError(f"{path}: line 2: expected result column header {columns}")
    d = coefficient_count(order)

    rows: list[ResultRow] = []
    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = next(csv.reader([line]))
        if len(parts) != len(columns):
            raise ParseError(
                f"{path}: line {line_no}: expected {len(columns)} fields, got {len(parts)}"
            )
        try:
            vid = int(parts[0])
            row_method = parts[1]
            row_order = int(parts[2])
            theta = np.array([parse_number(p) for p in parts[3 : 3 + d]])
            s0_sq = parse_number(parts[3 + d])
            sigma_sq = parse_number(parts[4 + d])
            conv_text = parts[5 + d].strip().lower()
            if conv_text not in ("true", "false"):
                raise ValueError(f"converged must be true/false, got {parts[5 + d]!r}")
            converged = conv_text == "true"
            iterations = int(parts[6 + d])
            loglik = None if parts[7 + d] == "" else parse_number(parts[7 + d])
            fa = None if parts[8 + d] == "" else parse_number(parts[8 + d])
            md = parse_number(parts[9 + d])
            flags = tuple(f for f in parts[10 + d].split(";") if f)
        except ValueError as exc:
            raise ParseError(f"{path}: line {line_no}: {exc}") from None
        if row_method != method or row_order != order:
            raise ParseError(
                f"{path}: line {line_no}: row method/order disagrees with the header"
            )
        rows.append(
            ResultRow(
                voxel_id=vid, method=row_method, order=row_order, theta=theta,
                s0_sq=s0_sq, sigma_sq=sigma_sq, converged=converged,
                iterations=iterations, loglik=loglik, fa=fa, md=md, flags=flags,
            )
        )
    if not rows:
        raise ParseError(f"{path}: no result rows")
    return ResultFile(
        header=header, scheme=scheme, truth=truth, method=method, order=order, rows=rows
    )
