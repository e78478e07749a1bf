"""Reading and writing run artifacts.

Bulk numbers go to CSV with 17 significant digits (enough for an exact
float64 round trip); metadata goes to JSON.  Every run directory carries a
``manifest.json`` that lists the SHA-256 of its inputs and outputs, so a
pipeline can be audited by following the hashes.
"""

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .exceptions import MissingInput
from .pekar import PekarSolution, drift_field, hartree_potential, laplace_log_psi
from .radial import RadialGrid, WaveFunction, fit_tail

FLOAT_FORMAT = "%.17g"
SOLUTION_COLUMNS = ("r", "psi", "phi", "b", "laplace_log_psi")


def _version():
    from . import __version__
    return __version__


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def require(path, what="input"):
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"{what} not found: {path}")
    return path


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def read_json(path):
    with open(require(path)) as fh:
        return json.load(fh)


def write_table(path, columns, data):
    """Write a numeric table; ``data`` has one array per column."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in data])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, data, fmt=FLOAT_FORMAT, delimiter=",")


def read_table(path):
    """Read a table written by :func:`write_table` into ``{column: array}``."""
    path = require(path)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.empty((0, len(header)))
    return {name: data[:, k] for k, name in enumerate(header)}


def write_manifest(directory, command, params, seed, inputs=(), outputs=(), summary=None):
    """Record parameters and content hashes of inputs and outputs."""
    directory = Path(directory)
    manifest = {
        "command": command,
        "code_version": _version(),
        "seed": seed,
        "params": params,
        "inputs": {str(p): file_hash(p) for p in inputs},
        "outputs": {Path(p).name: file_hash(p) for p in outputs},
    }
    if summary is not None:
        manifest["summary"] = summary
    path = directory / "manifest.json"
    write_json(path, manifest)
    return path


# ---------------------------------------------------------------------------
# Pekar solution


def write_solution(solution, path):
    """Write ``r, psi, phi, b, laplace_log_psi`` to ``path`` and a JSON header beside it."""
    path = Path(path)
    psi = solution.psi
    grid = psi.grid
    phi = hartree_potential(psi)
    write_table(path, SOLUTION_COLUMNS,
                [grid.nodes, psi.values, phi.values, drift_field(psi).values,
                 laplace_log_psi(psi).values])
    header = {
        "grid": grid.params(),
        "C": solution.coulomb, "K": solution.kinetic, "g": solution.g,
        "mu": solution.mu, "residual": solution.residual,
        "iterations": solution.iterations, "virial_defect": solution.virial_defect,
    }
    header_path = path.with_suffix(".json")
    write_json(header_path, header)
    return path, header_path


def read_solution(path):
    """Rebuild a :class:`PekarSolution` from :func:`write_solution` output."""
    path = require(path, "solver output")
    header = read_json(require(path.with_suffix(".json"), "solver header"))
    table = read_table(path)
    grid = RadialGrid(**header["grid"])
    if not np.array_equal(grid.nodes, table["r"]):
        raise ValueError(f"radial nodes in {path} do not match the header grid")
    values = table["psi"]
    psi = WaveFunction(grid, values, tail_model=fit_tail(grid, values))
    return PekarSolution(psi, header["C"], header["K"], header["mu"], header["residual"],
                         header["iterations"])


# ---------------------------------------------------------------------------
# Increments


def write_increments(path, groups, lags, vectors):
    """``increments.csv`` with columns ``group, lag, dx, dy, dz``."""
    vectors = np.asarray(vectors, dtype=float).reshape(-1, 3)
    write_table(path, ("group", "lag", "dx", "dy", "dz"),
                [groups, lags, vectors[:, 0], vectors[:, 1], vectors[:, 2]])


def read_increments(path):
    """Return ``{lag: {group: (n, 3) array}}``."""
    t = read_table(path)
    vec = np.column_stack([t["dx"], t["dy"], t["dz"]])
    out = {}
    for lag in np.unique(t["lag"]):
        sel = t["lag"] == lag
        groups = t["group"][sel].astype(int)
        out[float(lag)] = {int(g): vec[sel][groups == g] for g in np.unique(groups)}
    return out


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
