"""Command-line front end.

Every subcommand writes one output file atomically plus a JSON sidecar
(``<out>.json``) holding the resolved configuration, library version, wall
time and status.  Parameters come from built-in defaults, then an optional
INI-style ``--config`` file (one section per subcommand, plus ``[common]``),
then command-line flags.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import re
import struct
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from qebath import __version__
from qebath.lattice import BAND_EXTENTS, LatticeKind, dos_histogram, momentum_grid, parse_kind

__all__ = ["main", "read_field", "write_field", "FIELD_MAGIC", "KIND_CODES"]

FIELD_MAGIC = b"LBF1"
FIELD_VERSION = 1
KIND_CODES = {LatticeKind.CS: 0, LatticeKind.BCC: 1, LatticeKind.FCC: 2, LatticeKind.DIAMOND: 3}
_HEADER = struct.Struct("<4sIIIId")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Invalid(Exception):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# parameter declarations


def _kind(text):
    return parse_kind(str(text).strip().lower())


def _triple(text):
    parts = [p for p in re.split(r"[,\s]+", str(text).strip()) if p]
    if len(parts) != 3:
        raise ValueError(f"expected three integers, got {text!r}")
    return tuple(int(p) for p in parts)


def _triples(text):
    return [_triple(chunk) for chunk in str(text).split(";") if chunk.strip()]


def _emitter_sites(text):
    """``"A:0,0,0; B:1,0,0"`` -> [(sublattice or None, (n1, n2, n3)), ...]."""
    out = []
    for chunk in str(text).split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        sub = None
        if ":" in chunk:
            sub, chunk = (s.strip() for s in chunk.split(":", 1))
        out.append((sub.upper() if sub else None, _triple(chunk)))
    return out


def _beams(text):
    """One beam per line: ``amplitude | polarization | propagation [| group]``."""
    from qebath.bloch import Beam

    beams = []
    for line in str(text).strip().splitlines():
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) not in (3, 4):
            raise ValueError(f"beam line needs 3 or 4 '|'-separated fields: {line!r}")
        pol = tuple(float(x) for x in re.split(r"[,\s]+", fields[1]) if x)
        prop = tuple(float(x) for x in re.split(r"[,\s]+", fields[2]) if x)
        if len(pol) != 3 or len(prop) != 3:
            raise ValueError(f"polarization and propagation need 3 components: {line!r}")
        group = int(fields[3]) if len(fields) == 4 else 0
        beams.append(Beam(float(fields[0]), pol, prop, group))
    return beams


def _choice(*options):
    def parse(text):
        text = str(text).strip().lower()
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text

    return parse


def _bool(text):
    text = str(text).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    name: str
    parse: Callable[[str], Any]
    default: Any = None
    help: str = ""
    flags: tuple = ()

    @property
    def option_strings(self):
        return self.flags or ("--" + self.name.replace("_", "-"),)


_LATTICE = Param("lattice", _kind, "cs", "bath lattice: cs, bcc, fcc or diamond")
_OUT = Param("out", str, None, "output file (a <out>.json sidecar is written next to it)")
_G = Param("g", float, 1.0, "emitter-bath coupling in units of J")
_DELTA = Param("delta", float, 0.0, "emitter detuning in units of J")
_T_MAX = Param("t_max", float, 30.0, "final time in units of 1/J")
_SAMPLES = Param("samples", int, 301, "number of output times")
_SIZE = Param("size", int, 64, "bath size N (N^3 cells)")
_DT = Param("dt", float, 0.01, "split-step time step")
_ORDER = Param("order", int, 4, "split-step order (2 or 4)")
_D_OMEGA = Param("d_omega", float, 0.0, "frequency-bin width (0 groups exact degeneracies)")
_EMITTERS = Param("emitters", _emitter_sites, None,
                  "emitter sites 'n1,n2,n3; ...' (diamond: 'A:n1,n2,n3'); the first starts excited")
_V0 = Param("v0", float, None, "lattice depth in recoil energies")
_Q_MAX = Param("q_max", int, 5, "plane-wave cutoff per reciprocal axis")
_BANDS = Param("bands", int, 1, "number of bands")
_BEAMS = Param("beams", _beams, None, "beam list (config file only): 'amp | pol | prop [| group]' per line")

_EXACT_METHODS = ("split-step", "freq-binned", "dense")

SUBCOMMANDS: dict[str, tuple[str, list[Param]]] = {
    "dos": ("histogram density of states of the bath", [
        _LATTICE,
        Param("size", int, 128, "bath size N", ("--n", "--size")),
        Param("bins", int, 400, "number of energy bins"),
        _OUT,
    ]),
    "selfenergy": ("analytic self-energy on an energy grid", [
        _LATTICE, _G,
        Param("e_min", float, None, "lowest energy (default: band bottom - 1)"),
        Param("e_max", float, None, "highest energy (default: band top + 1)"),
        Param("points", int, 400, "number of energies"),
        Param("eta", float, 0.0, "imaginary part added to every energy"),
        Param("region", int, None, "continuation region index (default: physical sheet)"),
        Param("brute_size", int, None, "also sum the lattice of this size (needs eta != 0)"),
        _OUT,
    ]),
    "poles": ("bound states and unstable poles of one emitter", [_LATTICE, _G, _DELTA, _OUT]),
    "dynamics": ("single-excitation emitter dynamics", [
        _LATTICE, _G, _DELTA, _T_MAX, _SAMPLES,
        Param("method", _choice("resolvent", *_EXACT_METHODS), "resolvent", "resolvent, split-step, freq-binned or dense"),
        _SIZE, _DT, _ORDER, _D_OMEGA, _EMITTERS, _OUT,
    ]),
    "snapshot": ("bath field at one time, written as an LBF1 binary", [
        _LATTICE, _G, _DELTA,
        Param("time", float, 10.0, "snapshot time in units of 1/J"),
        Param("method", _choice(*_EXACT_METHODS), "freq-binned", "split-step, freq-binned or dense"),
        _SIZE, _DT, _ORDER, _D_OMEGA, _EMITTERS, _OUT,
    ]),
    "subradiance": ("eight-emitter BCC subradiant state", [
        Param("n", int, 1, "emitter spacing index (positions +/-2n)"),
        Param("g", float, 0.1, "emitter-bath coupling in units of J"),
        Param("size", int, 128, "bath size N"),
        Param("t_max", float, 512.0, "final time in units of 1/J"),
        _SAMPLES,
        Param("method", _choice("freq-binned", "split-step"), "freq-binned", "freq-binned or split-step"),
        _DT, _ORDER, _OUT,
    ]),
    "exchange": ("two emitters outside the band: Markov and exact exchange", [
        Param("lattice", _kind, "fcc", "bath lattice (single band)"),
        Param("g", float, 0.1, "emitter-bath coupling in units of J"),
        Param("delta", float, 4.3, "emitter detuning in units of J"),
        Param("offset", _triple, (1, 0, 0), "second emitter offset 'n1,n2,n3'"),
        Param("size", int, 128, "bath size N"),
        Param("t_max", float, 3000.0, "final time in units of 1/J"),
        Param("samples", int, 601, "number of output times"),
        Param("simulate", _bool, False, "also run the exact degeneracy-class evolution"),
        _OUT,
    ]),
    "bloch": ("plane-wave Bloch bands of an optical lattice", [
        _LATTICE, _V0, _Q_MAX, Param("size", int, 8, "momentum grid size per axis"), _BANDS, _BEAMS, _OUT,
    ]),
    "hoppings": ("tight-binding hoppings from the Bloch bands", [
        _LATTICE, _V0, _Q_MAX, Param("size", int, 8, "momentum grid size per axis"), _BEAMS,
        Param("offsets", _triples, [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 0, 0)],
              "lattice offsets 'n1,n2,n3; ...'"),
        _OUT,
    ]),
    "bloch-dos": ("histogram DOS of the lowest Bloch band(s)", [
        _LATTICE, _V0, _Q_MAX, Param("size", int, 16, "momentum grid size per axis"), _BEAMS,
        Param("bins", int, 100, "number of energy bins"),
        Param("refine", int, 4, "interpolation factor before binning"),
        _OUT,
    ]),
}


# ---------------------------------------------------------------------------
# configuration resolution


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qebath", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"qebath {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (help_text, params) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="INI file with [common] and [%s] sections" % name)
        for par in params:
            if par.name == "beams":
                continue
            shown = "" if par.default is None else f" (default: {par.default})"
            # raw strings here; parsing and validation happen after merging
            p.add_argument(*par.option_strings, dest=par.name, default=None,
                           help=par.help + shown)
    return parser


def _read_config(path, command, known):
    problems = []
    values: dict[str, str] = {}
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        return values, [f"config file {path}: {exc}"]
    for section in ("common", command):
        if not cp.has_section(section):
            continue
        for key, val in cp.items(section):
            key = key.strip().replace("-", "_")
            if key not in known:
                if section == command:
                    problems.append(f"config [{section}]: unknown key {key!r}")
                continue
            values[key] = val
    return values, problems


def _default(p: Param):
    return p.parse(p.default) if isinstance(p.default, str) else p.default


def resolve_config(command: str, flags: dict, config_path: str | None = None) -> dict:
    """Merge defaults, config file and flags, parse and validate.

    Raises
    ------
    _Invalid
        With every problem found.
    """
    params = SUBCOMMANDS[command][1]
    known = {p.name: p for p in params}
    raw: dict[str, Any] = {}
    problems: list[str] = []
    if config_path is not None:
        file_values, problems = _read_config(config_path, command, known)
        raw.update(file_values)
    raw.update({k: v for k, v in flags.items() if v is not None and k in known})
    cfg: dict[str, Any] = {}
    for p in params:
        if p.name in raw:
            try:
                cfg[p.name] = p.parse(raw[p.name])
            except (ValueError, TypeError) as exc:
                problems.append(f"{p.name}: {exc}")
                # fall back to the default so the range checks below still run
                cfg[p.name] = _default(p)
        else:
            cfg[p.name] = _default(p)
    try:
        problems.extend(_VALIDATORS[command](cfg))
    except (ValueError, TypeError, KeyError) as exc:
        problems.append(str(exc))
    if cfg.get("out") is None:
        problems.append("out: an output path is required")
    if problems:
        raise _Invalid(problems)
    return cfg


def _positive(cfg, *names):
    return [f"{n} must be positive" for n in names if cfg.get(n) is not None and not cfg[n] > 0]


def _check_dos(cfg):
    return _positive(cfg, "size", "bins")


def _check_selfenergy(cfg):
    out = _positive(cfg, "g") + ([] if cfg["points"] >= 1 else ["points must be at least 1"])
    if cfg["e_min"] is not None and cfg["e_max"] is not None and cfg["e_min"] > cfg["e_max"]:
        out.append("e_min must not exceed e_max")
    if cfg["region"] is not None:
        from qebath.selfenergy import regions

        valid = [r.index for r in regions(cfg["lattice"])]
        if cfg["region"] not in valid:
            out.append(f"region must be one of {valid}")
    if cfg["brute_size"] is not None:
        if cfg["brute_size"] < 16:
            out.append("brute_size must be at least 16")
        if cfg["eta"] == 0:
            out.append("brute_size needs a nonzero eta")
    return out


def _check_poles(cfg):
    return _positive(cfg, "g")


def _layout(cfg):
    """Emitter layout from ``emitters``/``g``/``delta``; the first emitter starts excited."""
    from qebath.exactdyn import Emitter, EmitterLayout

    kind = cfg["lattice"]
    sites = cfg["emitters"]
    if sites is None:
        sites = [("A" if kind is LatticeKind.DIAMOND else None, (0, 0, 0))]
    ems = [Emitter(pos, cfg["g"], cfg["delta"], 1.0 if i == 0 else 0.0, sub)
           for i, (sub, pos) in enumerate(sites)]
    return EmitterLayout(kind, cfg["size"], ems)


def _evolution_config(cfg, t_max, n_samples, snapshots=()):
    from qebath.exactdyn import EvolutionConfig

    return EvolutionConfig(method=cfg["method"], t_max=t_max, n_samples=n_samples, dt=cfg["dt"],
                           order=cfg["order"], d_omega=cfg.get("d_omega", 0.0),
                           snapshot_times=snapshots)


def _check_exact(cfg, t_max, n_samples, snapshots=()):
    from qebath.exactdyn import ConfigError

    try:
        layout = _layout(cfg)
    except ConfigError as exc:
        return exc.problems
    return _evolution_config(cfg, t_max, n_samples, snapshots).problems(layout)


def _check_dynamics(cfg):
    out = _positive(cfg, "t_max") + ([] if cfg["samples"] >= 2 else ["samples must be at least 2"])
    if cfg["method"] == "resolvent":
        out += _positive(cfg, "g")
        if cfg["emitters"] is not None and len(cfg["emitters"]) != 1:
            out.append("the resolvent method handles a single emitter")
        return out
    return out + _check_exact(cfg, cfg["t_max"], max(cfg["samples"], 2))


def _check_snapshot(cfg):
    out = _positive(cfg, "time")
    if out:
        return out
    return _check_exact(cfg, cfg["time"], 2, (cfg["time"],))


def _check_subradiance(cfg):
    out = _positive(cfg, "n", "g", "t_max", "size")
    if cfg["samples"] < 2:
        out.append("samples must be at least 2")
    if not out and not 4 * cfg["n"] < cfg["size"] / 2:
        out.append(f"need 4n < size/2 for the emitters to fit (n={cfg['n']}, size={cfg['size']})")
    if cfg["method"] == "split-step":
        out += _positive(cfg, "dt")
        if cfg["order"] not in (2, 4):
            out.append("order must be 2 or 4")
    return out


def _check_exchange(cfg):
    out = _positive(cfg, "g", "t_max", "size")
    if cfg["samples"] < 2:
        out.append("samples must be at least 2")
    kind = cfg["lattice"]
    if kind is LatticeKind.DIAMOND:
        out.append("exchange needs a single-band lattice")
    lo, hi = BAND_EXTENTS[kind]
    if lo <= cfg["delta"] <= hi:
        out.append(f"delta must lie outside the band [{lo:g}, {hi:g}]")
    if cfg["size"] and any(abs(o) >= cfg["size"] for o in cfg["offset"]):
        out.append("offset does not fit on the bath")
    return out


def _check_bloch_common(cfg):
    out = _positive(cfg, "q_max", "size")
    if cfg["beams"] is None and cfg["v0"] is None:
        out.append("v0 is required unless a beam list is given")
    if cfg["beams"] is not None:
        try:
            _potential(cfg).on_lattice(cfg["lattice"])
        except ValueError as exc:
            out.append(f"beams: {exc}")
    return out


def _check_bloch(cfg):
    return _check_bloch_common(cfg) + _positive(cfg, "bands")


def _check_hoppings(cfg):
    out = _check_bloch_common(cfg)
    if cfg["size"] and any(abs(x) > cfg["size"] // 2 for o in cfg["offsets"] for x in o):
        out.append(f"offsets must satisfy |n_i| <= size/2 = {cfg['size'] // 2}")
    return out


def _check_bloch_dos(cfg):
    return _check_bloch_common(cfg) + _positive(cfg, "bins", "refine")


_VALIDATORS = {
    "dos": _check_dos,
    "selfenergy": _check_selfenergy,
    "poles": _check_poles,
    "dynamics": _check_dynamics,
    "snapshot": _check_snapshot,
    "subradiance": _check_subradiance,
    "exchange": _check_exchange,
    "bloch": _check_bloch,
    "hoppings": _check_hoppings,
    "bloch-dos": _check_bloch_dos,
}


# ---------------------------------------------------------------------------
# output helpers


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % (float(x) + 0.0)


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue().encode("ascii")


def _columns_csv(columns: dict) -> bytes:
    """CSV from equal-length float columns (name -> array)."""
    arrays = [np.asarray(v, dtype=float) for v in columns.values()]
    return _csv_bytes(list(columns), zip(*arrays))


def _safe_label(label: str) -> str:
    return re.sub(r"[^0-9A-Za-z.+-]+", "_", label).strip("_")


def _complex_columns(name, values) -> dict:
    v = np.asarray(values, dtype=complex)
    return {f"re_{name}": v.real, f"im_{name}": v.imag}


def _jsonable(value):
    if isinstance(value, LatticeKind):
        return value.value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    if hasattr(value, "__dict__") and not isinstance(value, type):
        return _jsonable(vars(value))
    return value


def write_field(path: str, field) -> None:
    """Write a bath field as LBF1: header then little-endian (Re, Im) pairs, n3 fastest."""
    amps = np.ascontiguousarray(field.amplitudes, dtype="<c16")
    header = _HEADER.pack(FIELD_MAGIC, FIELD_VERSION, KIND_CODES[field.kind], field.N,
                          field.n_sublattices, float(field.time))
    _atomic_write(path, header + amps.tobytes(order="C"))


def read_field(path: str):
    """Read an LBF1 file back into a :class:`~qebath.exactdyn.BathField`."""
    from qebath.exactdyn import BathField

    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ValueError("file too short for an LBF1 header")
    magic, version, code, N, n_sub, t = _HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FIELD_VERSION:
        raise ValueError(f"unsupported LBF1 version {version}")
    kind = {v: k for k, v in KIND_CODES.items()}[code]
    shape = (N, N, N) if n_sub == 1 else (n_sub, N, N, N)
    body = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    if body.size != int(np.prod(shape)):
        raise ValueError("LBF1 payload size does not match the header")
    return BathField(body.reshape(shape).astype(complex), t, kind)


# ---------------------------------------------------------------------------
# subcommands; each returns (output bytes or None, results for the sidecar)


def _run_dos(cfg):
    h = dos_histogram(cfg["lattice"], cfg["size"], cfg["bins"])
    return _columns_csv({"energy_over_J": h.centers, "dos": h.density}), {
        "n_modes": int(h.n_modes_total)}


def _run_selfenergy(cfg):
    from qebath.selfenergy import sigma_analytic, sigma_brute

    kind = cfg["lattice"]
    lo, hi = BAND_EXTENTS[kind]
    e_min = lo - 1.0 if cfg["e_min"] is None else cfg["e_min"]
    e_max = hi + 1.0 if cfg["e_max"] is None else cfg["e_max"]
    e = np.linspace(e_min, e_max, cfg["points"])
    z = e + 1j * cfg["eta"]
    cols = {"energy_over_J": e}
    cols.update(_complex_columns("sigma", sigma_analytic(kind, z, cfg["region"], cfg["g"])))
    if cfg["brute_size"] is not None:
        cols.update(_complex_columns("sigma_brute", sigma_brute(kind, z, cfg["brute_size"], cfg["g"])))
    return _columns_csv(cols), {}


def _run_poles(cfg):
    from qebath.resolvent import find_poles

    poles = find_poles(cfg["lattice"], cfg["delta"], cfg["g"])
    rows = [(p.kind.name, p.region.label, p.z.real, p.z.imag, p.residue.real, p.residue.imag)
            for p in poles]
    header = ["kind", "region", "re_z", "im_z", "re_residue", "im_residue"]
    return _csv_bytes(header, rows), {
        "n_poles": len(poles),
        "unconverged_seeds": {k: len(v) for k, v in poles.diagnostics.items()},
    }


def _run_dynamics(cfg):
    t = np.linspace(0.0, cfg["t_max"], cfg["samples"])
    cols = {"t": t}
    if cfg["method"] == "resolvent":
        from qebath.resolvent import amplitude_series

        trace, breakdown = amplitude_series(cfg["lattice"], cfg["delta"], cfg["g"], t)
        cols.update(_complex_columns("C_e", trace["C_e"]))
        for label, series in trace.contributions.items():
            cols.update(_complex_columns(_safe_label(label), series))
        return _columns_csv(cols), {"weights": breakdown.as_dict(), "weight_sum": breakdown.total}
    from qebath.exactdyn import evolve

    result = evolve(_layout(cfg), _evolution_config(cfg, cfg["t_max"], cfg["samples"]))
    names = ["C_e"] if len(result.trace.labels) == 1 else result.trace.labels
    for i, name in enumerate(names):
        cols.update(_complex_columns(name, result.trace.amplitudes[:, i]))
    return _columns_csv(cols), {"diagnostics": result.diagnostics}


def _run_snapshot(cfg):
    from qebath.exactdyn import evolve

    result = evolve(_layout(cfg), _evolution_config(cfg, cfg["time"], 2, (cfg["time"],)))
    field = result.snapshots[0]
    write_field(cfg["out"], field)
    return None, {"bath_norm": field.norm(), "diagnostics": result.diagnostics}


def _run_subradiance(cfg):
    from qebath.exactdyn import EvolutionConfig, collective_amplitude, evolve, subradiant_layout
    from qebath.resolvent import subradiant_residue

    layout = subradiant_layout(cfg["n"], cfg["g"], cfg["size"])
    ec = EvolutionConfig(method=cfg["method"], t_max=cfg["t_max"], n_samples=cfg["samples"],
                         dt=cfg["dt"], order=cfg["order"], d_omega=0.0)
    result = evolve(layout, ec)
    c_sb = collective_amplitude(result.trace, layout.initial_amplitudes)
    cols = {"t": result.trace.times}
    cols.update(_complex_columns("C_sb", c_sb))
    cols["population_sb"] = np.abs(c_sb) ** 2
    return _columns_csv(cols), {
        "final_population": float(np.abs(c_sb[-1]) ** 2),
        "residue_squared_infinite": subradiant_residue(cfg["n"], cfg["g"]) ** 2,
        "residue_squared_finite": subradiant_residue(cfg["n"], cfg["g"], cfg["size"]) ** 2,
        "diagnostics": result.diagnostics,
    }


def _run_exchange(cfg):
    from qebath.resolvent import markov_two_qe

    kind, g, delta, off, N = cfg["lattice"], cfg["g"], cfg["delta"], cfg["offset"], cfg["size"]
    t = np.linspace(0.0, cfg["t_max"], cfg["samples"])
    pops, freqs = markov_two_qe(kind, delta, g, off, t, N)
    cols = {"t": t, "population_1_markov": pops[:, 0], "population_2_markov": pops[:, 1]}
    results = {"exchange": freqs._asdict()}
    if cfg["simulate"]:
        from qebath.exactdyn import Emitter, EmitterLayout, EvolutionConfig, evolve

        layout = EmitterLayout(kind, N, [Emitter((0, 0, 0), g, delta, 1.0),
                                         Emitter(tuple(o % N for o in off), g, delta, 0.0)])
        res = evolve(layout, EvolutionConfig(method="freq-binned", t_max=cfg["t_max"],
                                             n_samples=cfg["samples"], d_omega=0.0))
        cols["population_1_exact"] = np.abs(res.trace.amplitudes[:, 0]) ** 2
        cols["population_2_exact"] = np.abs(res.trace.amplitudes[:, 1]) ** 2
        results["diagnostics"] = res.diagnostics
    return _columns_csv(cols), results


def _potential(cfg):
    from qebath.bloch import BeamSet, interfere, standard_potential

    if cfg["beams"] is not None:
        pot = interfere(BeamSet(cfg["beams"]), cfg["lattice"])
        return pot if cfg["v0"] is None else pot.scaled(cfg["v0"])
    return standard_potential(cfg["lattice"], cfg["v0"])


def _bands(cfg, n_bands=1):
    from qebath.bloch import solve_bands

    if cfg["lattice"] is LatticeKind.DIAMOND:
        n_bands = max(n_bands, 2)
    return solve_bands(_potential(cfg), cfg["q_max"], cfg["size"], n_bands, cfg["lattice"])


def _run_bloch(cfg):
    bands = _bands(cfg, cfg["bands"])
    N, nb = bands.N, bands.n_bands
    m = np.stack(np.meshgrid(*[np.arange(N)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    k = momentum_grid(N)[m]
    e = bands.energies.reshape(-1, nb)
    header = ["m1", "m2", "m3", "k1", "k2", "k3"] + [f"energy_{b + 1}_over_ER" for b in range(nb)]
    rows = ([*mi, *ki, *ei] for mi, ki, ei in zip(m.tolist(), k, e))
    return _csv_bytes(header, rows), {"band_min": float(e.min()), "band_max": float(e.max())}


def _run_hoppings(cfg):
    from qebath.bloch import extract_hoppings

    bands = _bands(cfg)
    tables = extract_hoppings(bands, cfg["offsets"])
    if not isinstance(tables, dict):
        tables = {"A": tables}
    rows = []
    for name, table in tables.items():
        for off, j in zip(table.offsets.tolist(), table.hoppings):
            rows.append([name, *off, j.real, j.imag])
    header = ["table", "n1", "n2", "n3", "re_J_over_ER", "im_J_over_ER"]
    return _csv_bytes(header, rows), {}


def _run_bloch_dos(cfg):
    from qebath.bloch import numerical_dos

    h = numerical_dos(_bands(cfg), cfg["bins"], cfg["refine"])
    return _columns_csv({"energy_over_ER": h.centers, "dos": h.density}), {}


_RUNNERS = {
    "dos": _run_dos,
    "selfenergy": _run_selfenergy,
    "poles": _run_poles,
    "dynamics": _run_dynamics,
    "snapshot": _run_snapshot,
    "subradiance": _run_subradiance,
    "exchange": _run_exchange,
    "bloch": _run_bloch,
    "hoppings": _run_hoppings,
    "bloch-dos": _run_bloch_dos,
}


# ---------------------------------------------------------------------------
# entry point


def _numerical_errors():
    from qebath.exactdyn import EvolutionError
    from qebath.selfenergy import NonAnalyticPointError

    return (ArithmeticError, EvolutionError, NonAnalyticPointError, np.linalg.LinAlgError)


def _sidecar(path, command, config, status, wall, results=None, error=None):
    meta = {
        "command": command,
        "version": __version__,
        "status": status,
        "wall_time_s": wall,
        "config": _jsonable(config),
        "output": path,
    }
    if results:
        meta["results"] = _jsonable(results)
    if error is not None:
        meta["error"] = _jsonable(error)
    _atomic_write(path + ".json", (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())


def main(argv=None) -> int:
    """Run one subcommand; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    start = time.perf_counter()
    try:
        cfg = resolve_config(command, flags, args.config)
    except _Invalid as exc:
        print(f"qebath {command}: invalid configuration", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        out = flags.get("out")
        if out:
            try:
                _sidecar(out, command, flags, "invalid-config", time.perf_counter() - start,
                         error={"problems": exc.problems})
            except OSError:
                pass
        return EXIT_CONFIG

    numerical = _numerical_errors()
    try:
        data, results = _RUNNERS[command](cfg)
    except numerical as exc:
        msg = f"{type(exc).__name__}: {exc}"
        print(f"qebath {command}: numerical failure: {msg}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"  diagnostics: {json.dumps(_jsonable(diag), sort_keys=True)}", file=sys.stderr)
        _sidecar(cfg["out"], command, cfg, "numerical-failure", time.perf_counter() - start,
                 error={"message": msg, "diagnostics": diag})
        return EXIT_NUMERIC
    except ValueError as exc:
        # a module precondition the validators did not anticipate
        print(f"qebath {command}: invalid configuration\n  - {exc}", file=sys.stderr)
        _sidecar(cfg["out"], command, cfg, "invalid-config", time.perf_counter() - start,
                 error={"problems": [str(exc)]})
        return EXIT_CONFIG
    if data is not None:
        _atomic_write(cfg["out"], data)
    _sidecar(cfg["out"], command, cfg, "ok", time.perf_counter() - start, results)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
