"""Checkpoint files: the phi history of a flow run in one .npz archive.

The archive holds ``times`` (K,), ``values`` (K, charts, n_w, n_w, n_r,
n_theta) and ``header``, a JSON string with the lattice, the atlas charts
and the hash of the flow configuration that produced it.
"""

import json
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from app.core.errors import InvalidInput
from app.deformation.lattice import Atlas, Lattice

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]

FORMAT_VERSION = 2


@dataclass
class Checkpoint:
    atlas: Atlas
    times: npt.NDArray[np.float64]
    values: ComplexArray
    config_hash: str
    header: dict[str, Any]


def save_checkpoint(
    path: Path,
    *,
    atlas: Atlas,
    history: list[tuple[float, ComplexArray]],
    config_hash: str,
    extra: dict[str, Any] | None = None,
) -> Path:
    lattice = atlas.lattice
    header = {
        "format": FORMAT_VERSION,
        "n_w": lattice.n_w,
        "n_r": lattice.n_r,
        "n_theta": lattice.n_theta,
        "w_box": lattice.w_box,
        "r_min": lattice.r_min,
        "charts": list(atlas.charts),
        "t": [t for t, _ in history],
        "config_hash": config_hash,
        **(extra or {}),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez_compressed(
            fh,
            times=np.array([t for t, _ in history], dtype=np.float64),
            values=np.stack([v for _, v in history]),
            header=np.array(json.dumps(header, sort_keys=True)),
        )
    logger.info(f"checkpoint with {len(history)} snapshots written to {path}")
    return path


def load_checkpoint(path: Path, expected_hash: str | None = None) -> Checkpoint:
    try:
        data = np.load(path, allow_pickle=False)
        if not isinstance(data, np.lib.npyio.NpzFile):
            raise ValueError("not an npz archive")
        with data:
            header = json.loads(str(data["header"]))
            times = np.asarray(data["times"], dtype=np.float64)
            values = np.asarray(data["values"], dtype=np.complex128)
    except (OSError, EOFError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise InvalidInput(f"unreadable checkpoint {path}: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise InvalidInput(
            "unsupported checkpoint format",
            {"expected": FORMAT_VERSION, "found": header.get("format")},
        )
    try:
        atlas = Atlas(
            tuple(
                Lattice(
                    n_w=int(header["n_w"]),
                    n_r=int(header["n_r"]),
                    n_theta=int(header["n_theta"]),
                    w_box=float(header["w_box"]),
                    r_min=float(header["r_min"]),
                    chart=int(chart),
                )
                for chart in header["charts"]
            )
        )
        config_hash = str(header["config_hash"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"checkpoint header is incomplete: {exc}") from exc
    if not atlas.lattices or values.shape != (len(times), *atlas.shape):
        raise InvalidInput(
            "checkpoint arrays do not match their header",
            {"values": list(values.shape), "charts": header["charts"]},
        )
    if expected_hash is not None and config_hash != expected_hash:
        raise InvalidInput(
            "checkpoint was produced by a different flow configuration",
            {"expected": expected_hash, "found": config_hash},
        )
    return Checkpoint(
        atlas=atlas, times=times, values=values, config_hash=config_hash, header=header
    )
