"""``dimer-chaos`` command line entry point and experiment runners."""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import KINDS, U64_MAX, ConfigError, ExperimentConfig, parse_config
from .metrics import bhattacharyya_distance, perturbation_experiment, unperturbed_run
from .model import bessel_factor, bloch_coherent_state
from .quantum import (
    condensate_fraction_map,
    evolve_state,
    number_distribution,
    q_function,
)
from .semiclassical import (
    GridSpec,
    classify_chaos,
    lyapunov_map,
    poincare_section,
    regular_threshold,
)
from .states import locate_representative_states
from .wigner import (
    binned_number_distribution,
    evolve_ensemble,
    evolve_ensemble_series,
    moment_estimate,
    sample_initial_ensemble,
)

THREADS_ENV = "DIMER_CHAOS_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, columns: dict) -> None:
    """Header row plus one row per entry; floats carry 17 significant digits."""
    names = list(columns)
    data = [np.asarray(columns[k]).ravel() if not isinstance(columns[k], list) else columns[k]
            for k in names]
    n = len(data[0])
    if any(len(d) != n for d in data):
        raise ValueError("columns differ in length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_cell(d[i]) for d in data])


class Run:
    """Context shared by the experiment runners of one invocation."""

    def __init__(self, cfg: ExperimentConfig, threads: int):
        self.cfg = cfg
        self.params = cfg.params
        self.opt = cfg.options
        self.threads = threads
        self.meta: dict = {}
        self.files: dict = {}
        self._located = None

    @property
    def T(self):
        return self.params.period

    def t_end(self) -> float:
        t = self.opt["t_end"]
        return t * self.T if self.opt["time_unit"] == "period" else t

    def times(self, n: int | None = None) -> np.ndarray:
        n = self.opt["n_samples"] if n is None else n
        t_end = self.t_end()
        self.meta["time"] = {
            "t_end_absolute": t_end,
            "t_end_periods": None if self.T is None else t_end / self.T,
            "n_samples": n,
        }
        return np.linspace(0.0, t_end, n)

    def periods_column(self, t):
        return np.asarray(t) / self.T if self.T is not None else np.full(len(t), np.nan)

    def located(self):
        if self._located is None:
            self._located = locate_representative_states(self.params, threads=self.threads)
            self.meta["representative_states"] = {
                name: {"z": pt[0], "phi": pt[1], "lambda": self._located.exponents[name]}
                for name, pt in self._located.points.items()
            }
            self.meta["regular_threshold"] = self._located.threshold
        return self._located

    def point(self, name: str | None = None):
        name = name or self.opt["state"]
        if name == "coherent":
            pt = (self.opt["z0"] * self.params.N, self.opt["phi0"])
        else:
            pt = self.located()[name]
        self.meta.setdefault("initial_states", {})[name] = {"z": pt[0], "phi": pt[1]}
        return pt

    def quantum_kw(self):
        return {"max_step": self.opt["max_step"]}

    def emit(self, name: str, columns: dict):
        self.files[name] = columns


def _grid(opt) -> GridSpec:
    return GridSpec(opt["n_z"], opt["n_phi"], opt["z_min"], opt["z_max"], opt["phi_center"])


def run_poincare(r: Run):
    o, N = r.opt, r.params.N
    seeds = np.column_stack([np.asarray(o["seeds_z"]) * N, o["seeds_phi"]])
    sec = poincare_section(r.params, seeds, o["periods"], o["strobe_period"], o["effective"])
    K, S = sec.z.shape
    k = np.repeat(np.arange(K)[None, :], S, axis=0)
    r.meta["strobe_period"] = sec.period
    r.meta["seed_errors"] = list(sec.errors)
    r.emit("section", {
        "seed_id": np.repeat(np.arange(S), K), "k": k.ravel(), "t": k.ravel() * sec.period,
        "z": sec.z.T.ravel(), "phi": sec.phi.T.ravel(),
    })


def run_lyapunov_map(r: Run):
    o = r.opt
    lmap = lyapunov_map(r.params, _grid(o), o["delta0"], o["n_periods"], threads=r.threads)
    n_z, n_phi = lmap.exponent.shape
    ii, jj = np.meshgrid(np.arange(n_z), np.arange(n_phi), indexing="ij")
    cols = {"i": ii.ravel(), "j": jj.ravel(), "z": lmap.z.ravel(), "phi": lmap.phi.ravel(),
            "lambda": lmap.exponent.ravel(), "fit_residual": lmap.residual.ravel(),
            "saturated": lmap.saturated.ravel(), "failed": lmap.failed.ravel()}
    if o["with_threshold"]:
        ref = regular_threshold(r.params, threads=r.threads, delta0=o["delta0"],
                                n_periods=o["n_periods"])
        r.meta["regular_threshold"] = ref.max_exponent
        r.meta["threshold_grid"] = "40x40 unmodulated map, strobed at 2 pi / omega"
        cols["chaotic"] = np.nan_to_num(lmap.exponent.ravel(), nan=-np.inf) > ref.max_exponent
    r.meta["strobe_period"] = lmap.period
    r.emit("lyapunov_map", cols)


def run_chaos_fraction_scan(r: Run):
    o = r.opt
    refs = {}
    rows = {k: [] for k in ("mu", "omega", "fraction", "threshold", "n_chaotic", "n_valid", "n_failed")}
    side = int(round(np.sqrt(o["n_samples"])))
    for mu in o["mu_values"]:
        for omega in o["omega_values"]:
            p = r.params.replace(mu=mu, omega=omega)
            if omega not in refs:
                refs[omega] = regular_threshold(p, GridSpec(side, side), threads=r.threads)
            res = classify_chaos(p, o["n_samples"], r.threads, reference=refs[omega])
            for k, v in (("mu", mu), ("omega", omega), ("fraction", res.fraction),
                         ("threshold", res.threshold), ("n_chaotic", res.n_chaotic),
                         ("n_valid", res.n_valid), ("n_failed", res.n_failed)):
                rows[k].append(v)
    r.meta["threshold_grid"] = "unmodulated map on the same grid, strobed at 2 pi / omega"
    r.emit("chaos_fraction", rows)


def _series_columns(r: Run, series, prefix=""):
    cols = series.as_columns()
    t = cols.pop("t")
    out = {"t": t, "t_over_T": r.periods_column(t)}
    out.update({prefix + k: v for k, v in cols.items()})
    return out


def run_evolve(r: Run):
    o = r.opt
    psi0 = bloch_coherent_state(r.params, *r.point())
    times = r.times()
    _, series = evolve_state(r.params, psi0, times[-1], o["source"], times, **r.quantum_kw())
    r.meta["source"] = o["source"]
    r.emit("observables", _series_columns(r, series))


def _final_state(r: Run, source="time_dependent"):
    psi0 = bloch_coherent_state(r.params, *r.point())
    t_end = r.t_end()
    r.meta["time"] = {"t_end_absolute": t_end,
                      "t_end_periods": None if r.T is None else t_end / r.T}
    if t_end == 0:
        return psi0
    return evolve_state(r.params, psi0, t_end, source, **r.quantum_kw())


def run_qfunc(r: Run):
    o = r.opt
    q = q_function(_final_state(r, o["source"]), o["n_z"], o["n_phi"])
    zz, pp = np.meshgrid(q.z, q.phi, indexing="ij")
    r.meta.update(normalization=q.normalization, integral=q.integral(), argmax=list(q.argmax()))
    r.emit("qfunc", {"z": zz.ravel(), "phi": pp.ravel(), "Q": q.Q.ravel()})


def run_condensate_map(r: Run):
    o = r.opt
    t_end = r.t_end()
    r.meta["time"] = {"t_end_absolute": t_end,
                      "t_end_periods": None if r.T is None else t_end / r.T}
    cmap = condensate_fraction_map(r.params, _grid(o), t_end, o["source"], r.threads,
                                   **r.quantum_kw())
    n_z, n_phi = cmap.fraction.shape
    ii, jj = np.meshgrid(np.arange(n_z), np.arange(n_phi), indexing="ij")
    r.emit("condensate_map", {"i": ii.ravel(), "j": jj.ravel(), "z": cmap.z.ravel(),
                              "phi": cmap.phi.ravel(), "condensate_fraction": cmap.fraction.ravel()})


def _ensemble(r: Run, point):
    o = r.opt
    ens = sample_initial_ensemble(r.params, point[0], point[1], o["n_traj"], r.cfg.seed, o["sampling"])
    r.meta.update(seed=r.cfg.seed, n_traj=o["n_traj"], sampling=o["sampling"],
                  ordering="symmetric-ordering corrections applied to all moments")
    return ens


def run_tw_evolve(r: Run):
    o, N = r.opt, r.params.N
    point = r.point()
    times = r.times()
    moments, final = evolve_ensemble_series(r.params, _ensemble(r, point), times,
                                            lambda e: moment_estimate(e, N))
    r.meta["quarantined"] = final.n_quarantined
    cols = {"t": times, "t_over_T": r.periods_column(times)}
    for k in ("x", "y", "z", "var_x", "var_y", "var_z", "spin_length", "condensate_fraction"):
        cols[k] = np.array([getattr(m.moments, k) for m in moments])
    cols["se_z"] = np.array([m.se_z for m in moments])
    cols["se_condensate_fraction"] = np.array([m.se_condensate_fraction for m in moments])
    if o["compare_exact"]:
        psi0 = bloch_coherent_state(r.params, *point)
        _, series = evolve_state(r.params, psi0, times[-1], "time_dependent", times)
        cols["z_exact"] = series.z
        cols["std_z_exact"] = series.std_z
        cols["condensate_fraction_exact"] = series.condensate_fraction
    r.emit("tw_observables", cols)


def run_number_dist(r: Run):
    o, N = r.opt, r.params.N
    cols = {"n": np.arange(N + 1)}
    point = r.point()
    if o["method"] in ("exact", "both"):
        cols["P_exact"] = number_distribution(_final_state(r)).P
    if o["method"] in ("binned-TW", "both"):
        t_end = r.t_end()
        r.meta["time"] = {"t_end_absolute": t_end,
                          "t_end_periods": None if r.T is None else t_end / r.T}
        ens = evolve_ensemble(r.params, _ensemble(r, point), t_end)
        binned = binned_number_distribution(ens, 1, N)
        r.meta.update(out_of_range=binned.out_of_range, quarantined=ens.n_quarantined)
        cols["P_binned"] = binned.P
    if o["method"] == "both":
        r.meta["bhattacharyya_distance_exact_vs_binned"] = bhattacharyya_distance(
            cols["P_exact"], cols["P_binned"])
    r.emit("number_distribution", cols)


def run_bhattacharyya(r: Run):
    o = r.opt
    times = r.times()
    rows = {k: [] for k in ("series", "p", "t", "t_over_T", "D_B", "B", "overlap", "infinite")}
    tw = o["method"] == "binned-TW"
    extra = dict(n_traj=o["n_traj"], seed=r.cfg.seed, sampling=o["sampling"]) if tw else r.quantum_kw()
    for name in o["states"]:
        point = r.point(name)
        base = unperturbed_run(r.params, point, times, o["method"], **extra)
        for p in o["p_values"]:
            ds = perturbation_experiment(r.params, point, p, times, o["method"], baseline=base,
                                         **extra)
            overlap = ds.overlap if ds.overlap is not None else np.full(len(times), np.nan)
            for i in range(len(times)):
                rows["series"].append(name)
                rows["p"].append(p)
                rows["t"].append(times[i])
                rows["t_over_T"].append(times[i] / r.T)
                rows["D_B"].append(ds.distance[i])
                rows["B"].append(ds.coefficient[i])
                rows["overlap"].append(overlap[i])
                rows["infinite"].append(bool(np.isinf(ds.distance[i])))
    r.meta["method"] = o["method"]
    if tw:
        r.meta.update(seed=r.cfg.seed, n_traj=o["n_traj"], sampling=o["sampling"])
    r.emit("bhattacharyya", rows)


def run_effective_compare(r: Run):
    o, N = r.opt, r.params.N
    psi0 = bloch_coherent_state(r.params, *r.point())
    times = r.times()
    cols = {"t": times, "t_over_T": r.periods_column(times)}
    for source in ("time_dependent", "effective"):
        _, series = evolve_state(r.params, psi0, times[-1], source, times, **r.quantum_kw())
        cols["z_" + source] = series.z
        cols["std_z_" + source] = series.std_z
    r.meta["max_abs_dz_over_N"] = float(np.max(np.abs(cols["z_time_dependent"] - cols["z_effective"])) / N)
    r.meta["bessel_factor"] = bessel_factor(r.params)
    r.emit("observables", cols)

    seeds = np.column_stack([np.asarray(o["seeds_z"]) * N, o["seeds_phi"]])
    T = r.params.strobe_period
    sec = {k: [] for k in ("source", "seed_id", "k", "z", "phi")}
    for source, eff in (("time_dependent", False), ("effective", True)):
        s = poincare_section(r.params, seeds, o["periods"], T, effective=eff)
        K, S = s.z.shape
        for j in range(S):
            sec["source"] += [source] * K
            sec["seed_id"] += [j] * K
            sec["k"] += list(range(K))
            sec["z"] += list(s.z[:, j])
            sec["phi"] += list(s.phi[:, j])
    r.emit("sections", sec)


RUNNERS = {
    "poincare": run_poincare,
    "lyapunov-map": run_lyapunov_map,
    "chaos-fraction-scan": run_chaos_fraction_scan,
    "evolve": run_evolve,
    "qfunc": run_qfunc,
    "condensate-map": run_condensate_map,
    "tw-evolve": run_tw_evolve,
    "number-dist": run_number_dist,
    "bhattacharyya": run_bhattacharyya,
    "effective-compare": run_effective_compare,
}


def output_dir(cfg: ExperimentConfig, root) -> Path:
    return Path(root) / cfg.kind / cfg.digest()


def run_experiment(cfg: ExperimentConfig, out_root=".", threads: int | None = None) -> Path:
    """Run one experiment; returns the directory holding its CSV files and ``metadata.json``."""
    threads = cfg.threads if threads is None else threads
    r = Run(cfg, threads)
    start = time.perf_counter()
    RUNNERS[cfg.kind](r)
    wall = time.perf_counter() - start
    target = output_dir(cfg, out_root)
    target.mkdir(parents=True, exist_ok=True)
    names = []
    for name, cols in r.files.items():
        write_csv(target / f"{name}.csv", cols)
        names.append(f"{name}.csv")
    p = cfg.params
    meta = {
        "kind": cfg.kind,
        "config": cfg.canonical(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "threads": threads,
        "params": {**p.as_dict(), "C": p.C, "T": p.period},
        "files": names,
        "versions": {"dimer_chaos": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_time_s": wall,
        **r.meta,
    }
    with open(target / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return target


def _json_default(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("thread count must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dimer-chaos",
                                 description="Driven two-site Bose-Hubbard chaos experiments.")
    ap.add_argument("experiment", choices=KINDS)
    ap.add_argument("--config", required=True, help="experiment configuration file")
    ap.add_argument("--out", default="results", help="output root (default: results)")
    ap.add_argument("--seed", type=_u64, help="master seed, overrides [run] seed")
    ap.add_argument("--threads", type=_positive_int,
                    help=f"worker threads; overrides ${THREADS_ENV} and [run] threads")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        print(f"dimer-chaos: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.experiment)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"{args.config}: {line}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        try:
            threads = _positive_int(os.environ[THREADS_ENV])
        except argparse.ArgumentTypeError as exc:
            print(f"dimer-chaos: {THREADS_ENV}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        target = run_experiment(cfg, args.out, threads)
    except Exception as exc:  # engine failures surface as exit status 3
        print(f"dimer-chaos: {args.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(target)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
