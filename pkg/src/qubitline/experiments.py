"""Named experiments: each writes one plot-ready CSV per curve plus a manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

import qubitline
from qubitline.chain import (apply_record_jitter, estimate_g2, synthesize_atom_output,
                             synthesize_reference, write_calibration)
from qubitline.config import EXPERIMENTS, ExperimentConfig
from qubitline.correlation import (JITTER_SHIFT, default_tau_grid, g2_reference, g2_zero_sweep,
                                   theory_trace)
from qubitline.errors import ConfigError
from qubitline.params import TWO_PI, AtomParams, DriveSpec
from qubitline.scattering import mollow_spectrum, sweep_table, write_sweep_csv


def subseed(seed: int, label: str) -> int:
    """Deterministic integer seed for a labeled sub-run."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(label.encode()),))
    return int(ss.generate_state(1)[0])


def _fmt_power(p: float) -> str:
    return f"{p:g}dBm"


def _fmt_bw(bw: float) -> str:
    return "inf" if math.isinf(bw) else f"{bw / 1e6:g}MHz"


def _tau_grid(sw: dict) -> np.ndarray:
    return default_tau_grid(sw["tau_step"], sw["tau_span"])


def _pmap(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


class _Collector:
    """Serializes output writing and keeps the file list for the manifest."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.files.append(p)
        return p


def _points(cfg: ExperimentConfig, name: str) -> list[tuple[float, DriveSpec]]:
    pts = [(cfg.nominal_power(d), d) for d in cfg.drives(name)]
    if not pts:
        raise ConfigError(f"{cfg.source}: experiment '{name}' has an empty sweep list "
                          f"(set {name}.powers or {name}.photon_numbers)")
    return pts


def _trace_label(nominal: float, drive: DriveSpec, by_n: bool) -> str:
    return f"N{drive.n_photons:.4g}" if by_n else _fmt_power(nominal)


def _write_trace(trace, path, nominal_power):
    trace = replace(trace, power_dbm=nominal_power)
    trace.to_csv(path)


def run_fig1c(cfg, out, threads):
    sw = cfg.sweeps["fig1c"]
    powers = [cfg.nominal_power(d) for d in cfg.drives("fig1c")]
    if not powers:
        raise ConfigError(f"{cfg.source}: 'fig1c.powers' is empty")
    bw = sw["bw"][0]

    def row(p):
        r = sweep_table(cfg.atom, [p + cfg.power_offset_db], bw, sw["window"],
                        TWO_PI * sw["detuning"])[0]
        r["power_dbm"] = p
        return r

    write_sweep_csv(_pmap(row, powers, threads), out.path("fig1c_transmission.csv"))


def run_fig2a(cfg, out, threads):
    sw = cfg.sweeps["fig2a"]
    grid = _tau_grid(sw)
    n = cfg.samples
    chain = cfg.chain
    bws = sw["bw"]
    for bw in bws:
        c = replace(chain, bw=bw)
        noise = synthesize_reference("vacuum", 0.0, c, n_samples=n,
                                     seed=subseed(cfg.seed, f"fig2a noise {bw}"))
        write_calibration(out.path(f"fig2a_calibration_{_fmt_bw(bw)}.txt"), noise)
        for kind in ("thermal", "coherent"):
            if kind == "coherent" and bw != bws[-1]:
                continue
            rec = synthesize_reference(kind, cfg.reference_power_dbm, c, n_samples=n,
                                       seed=subseed(cfg.seed, f"fig2a {kind} {bw}"))
            if sw["jitter"] and chain.jitter_samples:
                rec = apply_record_jitter(rec, c, seed=subseed(cfg.seed, f"fig2a jitter {bw}"))
            est = estimate_g2(rec, noise, bw, grid, seed=subseed(cfg.seed, f"fig2a boot {bw}"),
                              threads=threads)
            tag = f"thermal_bw{_fmt_bw(bw)}" if kind == "thermal" else "coherent"
            est.to_csv(out.path(f"fig2a_{tag}.csv"))
            ref = g2_reference(kind, bw, grid)
            replace(ref, power_dbm=cfg.reference_power_dbm).to_csv(
                out.path(f"fig2a_{tag}_closed_form.csv"))


def _theory_curves(cfg, out, threads, name):
    sw = cfg.sweeps[name]
    grid = _tau_grid(sw)
    by_n = bool(sw["photon_numbers"])
    jobs = [(p, d, bw) for p, d in _points(cfg, name) for bw in sw["bw"]]

    def work(job):
        p, d, bw = job
        return theory_trace(cfg.atom, d, sw["port"], None if math.isinf(bw) else bw, grid,
                            sw["jitter"])

    for (p, d, bw), trace in zip(jobs, _pmap(work, jobs, threads)):
        label = _trace_label(p, d, by_n)
        suffix = f"_bw{_fmt_bw(bw)}" if len(sw["bw"]) > 1 or name == "fig2d" else ""
        _write_trace(trace, out.path(f"{name}_{sw['port']}_{label}{suffix}.csv"), p)


def run_fig2b(cfg, out, threads):
    _theory_curves(cfg, out, threads, "fig2b")
    sw = cfg.sweeps["fig2b"]
    inset = sw["inset_powers"]
    if inset:
        bw = sw["bw"][0]
        drives = [cfg.drive(p, sw["detuning"]) for p in inset]

        def g0(d):
            return g2_zero_sweep(cfg.atom, [d.power_dbm], sw["port"],
                                 None if math.isinf(bw) else bw, sw["jitter"])[0]

        values = _pmap(g0, drives, threads)
        bw_mhz = "inf" if math.isinf(bw) else f"{bw / 1e6:.10g}"
        with open(out.path(f"fig2b_{sw['port']}_g2zero_vs_power.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["power_dbm", "N", "g2_zero", "bw_mhz", "jitter"])
            for p, d, g in zip(inset, drives, values):
                w.writerow([f"{p:.6g}", f"{d.n_photons:.10g}", f"{g:.12g}", bw_mhz,
                            int(sw["jitter"])])


def run_fig2c(cfg, out, threads):
    _theory_curves(cfg, out, threads, "fig2c")


def run_fig2d(cfg, out, threads):
    _theory_curves(cfg, out, threads, "fig2d")


def run_fig3b(cfg, out, threads):
    sw = cfg.sweeps["fig3b"]
    powers = [cfg.nominal_power(d) for d in cfg.drives("fig3b")]
    if not powers:
        raise ConfigError(f"{cfg.source}: 'fig3b.powers' is empty")
    for bw in sw["bw"]:
        def row(p):
            r = sweep_table(cfg.atom, [p + cfg.power_offset_db], bw, sw["window"],
                            TWO_PI * sw["detuning"])[0]
            r["power_dbm"] = p
            return r

        write_sweep_csv(_pmap(row, powers, threads), out.path(f"fig3b_bw{_fmt_bw(bw)}.csv"))


def run_spectrum(cfg, out, threads):
    sw = cfg.sweeps["spectrum"]
    drives = []
    for unit, value in sw["rabi"]:
        omega_r = value * cfg.atom.gamma10 if unit == "gamma10" else TWO_PI * value
        drives.append(DriveSpec.from_rabi(cfg.atom, omega_r, TWO_PI * sw["detuning"]))
    drives += [d for _, d in ([] if not (sw["powers"] or sw["photon_numbers"])
                              else _points(cfg, "spectrum"))]
    if not drives:
        raise ConfigError(f"{cfg.source}: 'spectrum' needs spectrum.rabi or spectrum.powers")
    half = 0.5 * TWO_PI * sw["span"]
    grid = cfg.atom.omega01 + np.linspace(-half, half, sw["points"])

    spectra = _pmap(lambda d: mollow_spectrum(cfg.atom, d, grid), drives, threads)
    comp_rows = []
    for d, spec in zip(drives, spectra):
        ratio = d.omega_rabi / cfg.atom.gamma10
        label = f"rabi{ratio:.4g}gamma"
        with open(out.path(f"spectrum_{label}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["offset_mhz", "density_w_per_hz"])
            for om, s in zip(spec.omega, spec.density):
                w.writerow([f"{(om - cfg.atom.omega01) / TWO_PI / 1e6:.8g}",
                            f"{s * TWO_PI:.10e}"])
        for c in spec.components or ():
            comp_rows.append([f"{ratio:.6g}", f"{(c.center - cfg.atom.omega01) / TWO_PI / 1e6:.8g}",
                              f"{c.hwhm / TWO_PI / 1e6:.8g}", f"{c.weight:.8e}",
                              f"{spec.elastic_weight:.8e}", f"{spec.inelastic_weight:.8e}"])
    with open(out.path("spectrum_components.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rabi_over_gamma10", "center_offset_mhz", "hwhm_mhz", "weight_w",
                    "elastic_w", "inelastic_w"])
        w.writerows(comp_rows)


def run_custom(cfg, out, threads):
    _theory_curves(cfg, out, threads, "custom")
    sw = cfg.sweeps["custom"]
    if not sw["chain"]:
        return
    # Trajectory synthesis needs a vacuum line.
    atom = AtomParams(cfg.atom.omega01, cfg.atom.gamma10, cfg.atom.gamma_phi, 0.0)
    grid = _tau_grid(sw)
    by_n = bool(sw["photon_numbers"])
    for p, d in _points(cfg, "custom"):
        for bw in sw["bw"]:
            if math.isinf(bw):
                raise ConfigError(f"{cfg.source}: the chain estimator needs a finite custom.bw")
            c = replace(cfg.chain, bw=bw)
            label = _trace_label(p, d, by_n)
            rec = synthesize_atom_output(atom, d, sw["port"], c, n_samples=cfg.samples,
                                         n_trajectories=cfg.trajectories,
                                         seed=subseed(cfg.seed, f"custom atom {label}"),
                                         threads=threads)
            if sw["jitter"] and c.jitter_samples:
                rec = apply_record_jitter(rec, c, seed=subseed(cfg.seed, f"custom jitter {label}"))
            noise = synthesize_reference("vacuum", 0.0, c, n_samples=cfg.samples,
                                         seed=subseed(cfg.seed, f"custom noise {label}"))
            est = estimate_g2(rec, noise, bw, grid, seed=subseed(cfg.seed, f"custom boot {label}"),
                              threads=threads)
            est.to_csv(out.path(f"custom_chain_{sw['port']}_{label}_bw{_fmt_bw(bw)}.csv"))


RUNNERS = {
    "fig1c": run_fig1c, "fig2a": run_fig2a, "fig2b": run_fig2b, "fig2c": run_fig2c,
    "fig2d": run_fig2d, "fig3b": run_fig3b, "spectrum": run_spectrum, "custom": run_custom,
}
assert set(RUNNERS) == set(EXPERIMENTS)


def _jsonable(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(name: str, cfg: ExperimentConfig, out_dir, threads: int | None = None) -> Path:
    """Run one named experiment; returns the manifest path."""
    if name not in RUNNERS:
        raise ConfigError(f"unknown experiment '{name}' (choose from {', '.join(EXPERIMENTS)})")
    threads = cfg.threads if threads is None else threads
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    collector = _Collector(out_dir)
    t0 = time.perf_counter()
    RUNNERS[name](cfg, collector, threads)
    runtime = time.perf_counter() - t0

    import numba
    import scipy
    manifest = {
        "experiment": name,
        "package_version": qubitline.__version__,
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "numba": numba.__version__},
        "seed": cfg.seed,
        "config_source": cfg.source,
        "inputs": _jsonable(dict(sorted(cfg.values.items()))),
        "power_offset_db": cfg.power_offset_db,
        "sweep_points": _jsonable(cfg.echo(name)[name]),
        "jitter_shift_s": JITTER_SHIFT,
        "runtime_s": round(runtime, 3),
        "argv": sys.argv[1:],
        "files": [{"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
                  for p in collector.files],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
