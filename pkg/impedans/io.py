"""
File I/O: atomic JSON and CSV writers, validated readers.

Every write goes to a temporary file in the target directory and is moved
into place with os.replace, so readers never see a partial file.
"""

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from impedans.errors import SchemaError
from impedans.schemas import DatasetFile, ReferenceSpectrumFile, ResultBundle, from_pairs

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

SPECTRUM_HEADER = (
    "frequency [Hz]",
    "zeta_re [-]",
    "zeta_im [-]",
    "alpha_normal [-]",
    "alpha_oblique [-]",
    "alpha_random [-]",
)


def atomic_write_text(path: Path, text: str) -> Path:
    """Write text to path via a temporary sibling and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {path}")
    return path


def dump_model(model: BaseModel) -> str:
    """Canonical JSON text for a schema model."""
    data = model.model_dump(mode="json", by_alias=True)
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def write_json_model(path: Path, model: BaseModel) -> Path:
    return atomic_write_text(path, dump_model(model))


def _json_path(location: Sequence[Any]) -> str:
    parts = ["$"]
    for part in location:
        parts.append(f"[{part}]" if isinstance(part, int) else f".{part}")
    return "".join(parts)


def read_model(path: Path, model_cls: type[ModelT]) -> ModelT:
    """
    Load and validate a JSON file.

    Raises:
        SchemaError: If the file is not JSON or fails validation; the
            message lists the JSON path of every violation
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        locations = [_json_path(item["loc"]) for item in e.errors()]
        details = "; ".join(f"{_json_path(item['loc'])}: {item['msg']}" for item in e.errors())
        raise SchemaError(f"{path} failed {model_cls.__name__} validation: {details}", locations) from e


def read_reference_spectrum(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """
    Reference (frequencies, zeta) from either a reference spectrum file or a
    dataset file that carries reference_zeta.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e
    if isinstance(raw, dict) and "pressure" in raw:
        dataset = read_model(path, DatasetFile)
        if dataset.reference_zeta is None:
            raise SchemaError(f"{path} has no reference_zeta", ["$.reference_zeta"])
        return np.asarray(dataset.frequencies_hz), from_pairs(dataset.reference_zeta)
    reference = read_model(path, ReferenceSpectrumFile)
    return np.asarray(reference.frequencies_hz), from_pairs(reference.zeta)


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV with a header row; floats are written with full precision."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format(value) for value in row])
    return atomic_write_text(path, buffer.getvalue())


def write_spectrum_csv(path: Path, bundle: ResultBundle) -> Path:
    zeta = from_pairs(bundle.zeta)
    rows = zip(
        bundle.frequencies_hz,
        zeta.real,
        zeta.imag,
        bundle.alpha_normal,
        bundle.alpha_oblique,
        bundle.alpha_random,
    )
    return write_csv(path, SPECTRUM_HEADER, rows)


def write_convergence_csv(path: Path, bundle: ResultBundle) -> Path:
    """
    One row per checkpoint: losses, mean weights, optional reference
    errors and zeta_bar per frequency. Timing is left out so reruns match.
    """
    scalar_keys: list[str] = []
    for entry in bundle.convergence:
        for key in entry:
            if key not in ("zeta_bar", "elapsed_s") and key not in scalar_keys:
                scalar_keys.append(key)
    frequency_columns = []
    for f in bundle.frequencies_hz:
        frequency_columns += [f"zeta_re@{f:g}Hz [-]", f"zeta_im@{f:g}Hz [-]"]

    def rows():
        for entry in bundle.convergence:
            flat = [value for pair in entry["zeta_bar"] for value in pair]
            yield [entry.get(key) for key in scalar_keys] + flat

    header = [key if key == "epoch" else f"{key} [-]" for key in scalar_keys]
    return write_csv(path, [*header, *frequency_columns], rows())
