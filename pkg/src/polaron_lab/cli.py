"""Command-line front end: ``polaron-lab <subcommand> [options]``.

Subcommands
-----------
solve-pekar     radial maximiser -> solution.csv / solution.json
sample-polaron  path MCMC -> energies.csv, increments.csv
estimate-g      thermodynamic integration -> g_estimate.json
simulate-pekar  diffusion driven by a solver output -> trajectories.csv, increments.csv
compare         juxtapose everything -> report.json, report.csv

Every subcommand also writes ``manifest.json`` with the parameters, seed,
code version and SHA-256 hashes of its inputs and outputs.

Exit codes: 0 ok, 1 configuration error, 2 non-convergence, 3 missing input.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import artifacts
from .config import RunConfig
from .diagnostics import (IncrementSample, assemble_report, distance_to_reference,
                          gaussian_bump, localization_functional, msd_curve)
from .exceptions import ConfigError, MissingInput, NoConvergence, PolaronLabError
from .path_gibbs import (PathLattice, SamplerConfig, brownian_path, chain_rng, clt_variance,
                         sample_polaron, thermo_integrate)
from .pekar import solve_pekar
from .pekar_sde import DiffusionConfig, increments, simulate_pekar
from .radial import RadialGrid

logger = logging.getLogger("polaron_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NO_CONVERGENCE, EXIT_MISSING = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# Builders from the validated config


def _lattice(cfg, **changes):
    p = cfg.section("lattice")
    p.update(changes)
    return PathLattice(float(p["T"]), p["n_steps"], float(p["eps"]), float(p["eta"]),
                       p["kernel"], float(p["kappa"]))


def _sampler(cfg):
    s = cfg.section("sampler")
    return SamplerConfig(float(s["pcn_beta"]), float(s["local_width"]), s["n_sweeps"],
                         s["burn_in"], s["thinning"], cfg.seed, s["n_chains"], s["pcn_moves"])


def _window(lat, fraction):
    half = fraction * lat.T
    return (-half, half)


def _central_increments(chains, lag, window):
    k = chains[0].lag_steps(lag)
    return [c.increments(lag, window=window, stride=max(k, 1)) for c in chains]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_solve_pekar(cfg, out):
    s = cfg.section("solver")
    grid = RadialGrid(float(s["r_max"]), s["n_points"], s["spacing"])
    try:
        sol = solve_pekar(grid, float(s["tol"]), s["max_iter"], s["init"], float(s["damping"]))
    except NoConvergence as exc:
        print(f"no convergence after {exc.iterations} iterations; "
              f"last residual {exc.residual:.3e}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    csv_path, json_path = artifacts.write_solution(sol, out / "solution.csv")
    virial = "pass" if sol.virial_defect <= 1e-4 else "fail"
    summary = {"g": sol.g, "C": sol.coulomb, "K": sol.kinetic, "mu": sol.mu,
               "virial_defect": sol.virial_defect, "virial_flag": virial,
               "iterations": sol.iterations, "residual": sol.residual}
    artifacts.write_manifest(out, "solve-pekar", {"solver": s}, cfg.seed,
                             outputs=[csv_path, json_path], summary=summary)
    print(f"g = {sol.g:.10f}  virial defect = {sol.virial_defect:.2e} ({virial})  "
          f"iterations = {sol.iterations}")
    return EXIT_OK


def cmd_sample_polaron(cfg, out):
    lat = _lattice(cfg)
    scfg = _sampler(cfg)
    diag = cfg.section("diagnostics")
    chains = sample_polaron(lat, scfg)

    rows = []
    for c in chains:
        n = len(c.energy_trace)
        rows.append(np.column_stack([np.full(n, c.chain_id), np.arange(n),
                                     c.energy_trace, c.acceptance_trace]))
    rows = np.vstack(rows)
    energies = out / "energies.csv"
    artifacts.write_table(energies, ("chain", "sweep", "H", "acceptance"), rows.T)

    # increments in a central window, plus one endpoint row set (lag = 2T)
    window = _window(lat, float(diag["window"]))
    groups, lags, vecs = [], [], []
    for lag in diag["lags"]:
        if lag > window[1] - window[0] + 1e-12:
            continue
        for c, v in zip(chains, _central_increments(chains, float(lag), window)):
            groups.append(np.full(len(v), c.chain_id))
            lags.append(np.full(len(v), float(lag)))
            vecs.append(v)
    for c in chains:
        v = c.endpoint_displacement()
        groups.append(np.full(len(v), c.chain_id))
        lags.append(np.full(len(v), 2.0 * lat.T))
        vecs.append(v)
    inc_path = out / "increments.csv"
    artifacts.write_increments(inc_path, np.concatenate(groups), np.concatenate(lags),
                               np.vstack(vecs))

    sigma2, sigma2_se = clt_variance(chains)
    loc, loc_se, ctrl, ctrl_se = _localization(chains, lat, scfg, diag)
    summary = {"sigma2": sigma2, "sigma2_stderr": sigma2_se,
               "mean_energy": float(np.mean([c.mean_energy() for c in chains])),
               "acceptance": [c.acceptance for c in chains],
               "localization": loc, "localization_stderr": loc_se,
               "localization_control": ctrl, "localization_control_stderr": ctrl_se,
               "window": list(window)}
    artifacts.write_manifest(out, "sample-polaron",
                             {"lattice": lat.params(), "sampler": scfg.params(),
                              "diagnostics": diag}, cfg.seed,
                             outputs=[energies, inc_path], summary=summary)
    print(f"sigma2 = {sigma2:.4f} +- {sigma2_se:.4f}  localization = {loc:.4f} "
          f"(Brownian control {ctrl:.4f})")
    return EXIT_OK


def _localization(chains, lat, scfg, diag):
    """Mean Psi(V) over stored samples of each chain, and a Brownian control."""
    V = gaussian_bump(float(diag["bump_width"]))
    m = int(diag["localization_samples"])
    per_chain, control = [], []
    for c in chains:
        idx = np.linspace(0, c.n_samples - 1, min(m, c.n_samples)).astype(int)
        per_chain.append(np.mean([localization_functional(c.paths[i], V) for i in idx]))
        rng = chain_rng(scfg.seed + 1, c.chain_id)
        free = brownian_path(lat, rng, size=len(idx))
        control.append(np.mean([localization_functional(x, V) for x in free]))
    per_chain, control = np.asarray(per_chain), np.asarray(control)
    se = lambda v: float(v.std(ddof=1) / np.sqrt(len(v)))  # noqa: E731
    return float(per_chain.mean()), se(per_chain), float(control.mean()), se(control)


def cmd_estimate_g(cfg, out):
    lat = _lattice(cfg)
    scfg = _sampler(cfg)
    nodes = cfg.section("estimate")["kappa_nodes"]
    est = thermo_integrate(lat, nodes, scfg)
    path = out / "g_estimate.json"
    artifacts.write_json(path, est.to_dict())
    artifacts.write_manifest(out, "estimate-g",
                             {"lattice": lat.params(), "sampler": scfg.params(),
                              "kappa_nodes": nodes}, cfg.seed, outputs=[path],
                             summary={"g_hat": est.g_hat, "stderr": est.stderr})
    print(f"g_hat = {est.g_hat:.5f} +- {est.stderr:.5f}")
    return EXIT_OK


def cmd_simulate_pekar(cfg, out):
    solver_path = artifacts.require(cfg.section("io")["solver"], "solver output")
    sol = artifacts.read_solution(solver_path)
    d = cfg.section("diffusion")
    diag = cfg.section("diagnostics")
    dcfg = DiffusionConfig(float(d["dt"]), d["n_steps"], d["n_paths"], cfg.seed,
                           float(d["drift_clamp"]), d["record_every"])
    traj = simulate_pekar(sol.psi, dcfg, start=d["start"])

    outputs = []
    n_write = min(d["write_paths"], traj.n_paths)
    if n_write:
        pos = traj.positions[:n_write]
        k = np.arange(traj.n_records)
        pid = np.repeat(np.arange(n_write), traj.n_records)
        kk = np.tile(k, n_write)
        path = out / "trajectories.csv"
        artifacts.write_table(path, ("path_id", "k", "t", "x", "y", "z"),
                              [pid, kk, kk * traj.dt, *pos.reshape(-1, 3).T])
        outputs.append(path)

    total = traj.dt * (traj.n_records - 1)
    group_of_path = np.arange(traj.n_paths) * d["n_groups"] // traj.n_paths
    groups, lags, vecs = [], [], []
    for sample in increments(traj, [x for x in diag["lags"] if x <= total + 1e-12]):
        per_path = len(sample.vectors) // traj.n_paths
        groups.append(np.repeat(group_of_path, per_path))
        lags.append(np.full(len(sample.vectors), sample.lag))
        vecs.append(sample.vectors)
    inc_path = out / "increments.csv"
    artifacts.write_increments(inc_path, np.concatenate(groups), np.concatenate(lags),
                               np.vstack(vecs))
    outputs.append(inc_path)
    artifacts.write_manifest(out, "simulate-pekar", {"diffusion": d}, cfg.seed,
                             inputs=[solver_path, solver_path.with_suffix(".json")],
                             outputs=outputs,
                             summary={"n_clamped": int(traj.n_clamped),
                                      "record_dt": traj.dt})
    print(f"simulated {traj.n_paths} paths to t = {total:g} "
          f"({traj.n_clamped} clamped drift evaluations)")
    return EXIT_OK


def cmd_compare(cfg, out):
    io = cfg.section("io")
    diag = cfg.section("diagnostics")
    solver_path = artifacts.require(io["solver"], "solver output")
    sol = artifacts.read_solution(solver_path)
    pekar_dir = Path(io["pekar"])
    pekar_inc = artifacts.require(pekar_dir / "increments.csv", "Pekar increments")
    polaron_dirs = [Path(p) for p in io["polaron"]]
    inputs = [solver_path, pekar_inc]
    runs = []
    for p in polaron_dirs:
        inc = artifacts.require(p / "increments.csv", "Polaron increments")
        man_path = artifacts.require(p / "manifest.json", "Polaron manifest")
        inputs += [inc, man_path]
        runs.append((artifacts.read_json(man_path), artifacts.read_increments(inc)))
    g_table = []
    for p in io["g_estimates"]:
        path = artifacts.require(p, "g estimate")
        inputs.append(path)
        est = artifacts.read_json(path)
        g_table.append({"eps": est["lattice"]["eps"], "T": est["lattice"]["T"],
                        "g_hat": est["g_hat"], "stderr": est["stderr"]})
    g_table.sort(key=lambda r: -r["eps"])
    runs.sort(key=lambda r: -r[0]["params"]["lattice"]["eps"])

    reference = artifacts.read_increments(pekar_inc)
    comparisons, sigma_table, localization = [], [], {}
    lags = [float(x) for x in diag["lags"]]
    for k, (man, inc) in enumerate(runs):
        eps = man["params"]["lattice"]["eps"]
        summary = man.get("summary", {})
        if "sigma2" in summary:
            sigma_table.append({"eps": eps, "sigma2": summary["sigma2"],
                                "stderr": summary["sigma2_stderr"]})
        if "localization" in summary:
            localization[f"{eps:g}"] = {
                key: summary[key] for key in
                ("localization", "localization_stderr", "localization_control",
                 "localization_control_stderr")}
        for j, lag in enumerate(lags):
            if lag not in inc or lag not in reference:
                continue
            ref = np.vstack(list(reference[lag].values()))
            if len(ref) < 100:
                continue
            mean, se, _ = distance_to_reference(list(inc[lag].values()), ref,
                                                max_n=diag["max_n"],
                                                seed=cfg.seed + 1000 * k + j)
            comparisons.append({"eps": eps, "lag": lag, "distance": mean, "stderr": se})

    msd = {}
    for lag in sorted(reference):
        vecs = np.vstack(list(reference[lag].values()))
        if len(vecs) >= 30:
            msd.setdefault("pekar", []).append(IncrementSample(lag, vecs, "pekar"))
    for man, inc in runs:
        eps = man["params"]["lattice"]["eps"]
        T = man["params"]["lattice"]["T"]
        samples = [IncrementSample(lag, np.vstack(list(g.values())), "polaron")
                   for lag, g in sorted(inc.items())
                   if abs(lag - 2 * T) > 1e-9 and sum(map(len, g.values())) >= 30]
        if samples:
            msd[f"polaron_eps_{eps:g}"] = samples
    msd = {name: msd_curve(s).to_rows() for name, s in msd.items()}

    report = assemble_report(sol, g_table, sigma_table, comparisons, msd, localization,
                             seeds={"root": cfg.seed}, z=float(diag["z"]))
    rep = report.to_dict()
    json_path = out / "report.json"
    artifacts.write_json(json_path, rep)
    csv_path = out / "report.csv"
    _write_report_csv(csv_path, rep)
    artifacts.write_manifest(out, "compare", {"diagnostics": diag, "io": io}, cfg.seed,
                             inputs=inputs, outputs=[json_path, csv_path],
                             summary={"flags": rep["flags"]})
    for name, flag in rep["flags"].items():
        print(f"{name}: {flag}")
    return EXIT_OK


def _write_report_csv(path, rep):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "eps", "lag", "value", "stderr"])
        w.writerow(["g0", "", "", repr(rep["g0"]), ""])
        for r in rep["g_table"]:
            w.writerow(["g_hat", repr(r["eps"]), "", repr(r["g_hat"]), repr(r["stderr"])])
        for r in rep["sigma_table"]:
            w.writerow(["sigma2", repr(r["eps"]), "", repr(r["sigma2"]), repr(r["stderr"])])
        for r in rep["comparisons"]:
            w.writerow(["distance", repr(r["eps"]), repr(r["lag"]), repr(r["distance"]),
                        repr(r["stderr"])])


COMMANDS = {
    "solve-pekar": cmd_solve_pekar,
    "sample-polaron": cmd_sample_polaron,
    "estimate-g": cmd_estimate_g,
    "simulate-pekar": cmd_simulate_pekar,
    "compare": cmd_compare,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="polaron-lab", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="root seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    parser.add_argument("--out", help="output directory (default: ./<command>)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. lattice.eps=0.5")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        for item in args.set:
            cfg.override(item)
        if args.seed is not None:
            cfg.override(f"seed={args.seed}")
        cfg.validate()
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = artifacts.ensure_dir(args.out or args.command)
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (PolaronLabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
