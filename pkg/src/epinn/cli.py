"""Command-line entry point: ``epinn <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .design import (
    FdEvaluator,
    HnnEvaluator,
    OptimizeResult,
    ProximitySpec,
    SnnEvaluator,
    diff_objective,
    differential_evolution,
    f_ind,
    f_prox,
    nsga2,
    prox_objective,
    solve_diff,
    write_report,
)
from .fields import (
    CoupledSolver,
    GridField,
    InductorGeometry,
    MagneticSolver,
    SolverError,
    ThermalSolver,
    interpolate,
    total_induced_power,
)
from .geometry import build_mesh
from .neural import (
    MlpSpec,
    load_hypernetwork,
    load_snn,
    load_surrogate,
    save_hypernetwork,
    save_model,
    save_snn,
    save_surrogate,
)
from .training import (
    HyperValidation,
    MagneticDataset,
    TrainHistory,
    TrainingDivergedError,
    generate_dataset,
    random_designs,
    train_mnn,
    train_snn,
    train_tepinn,
    train_thnn,
)

logger = logging.getLogger("epinn")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_DIVERGED = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers


def _out(cfg, *parts) -> Path:
    p = Path(cfg["output_dir"]).joinpath(*parts)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def _solvers(cfg):
    mag = MagneticSolver(C.materials(cfg), C.layout(cfg), C.domain(cfg), C.magnetic_grid(cfg))
    th = cfg["thermal"]
    thermal = ThermalSolver(C.domain(cfg), th["nx"], th["ny"], cfg["materials"]["conductivity"], th["h"], th["T0"])
    return mag, thermal


def _geometry(cfg, xi) -> InductorGeometry:
    if xi is None:
        raise C.ConfigError("a design vector is required (--xi)")
    try:
        return InductorGeometry(tuple(xi), C.layout(cfg))
    except ValueError as exc:
        raise C.ConfigError(str(exc)) from exc


def _prox_spec(cfg) -> ProximitySpec:
    d = cfg["design"]
    return ProximitySpec(int(d["n_points"]), float(d["T_goal"]), float(d["tol"]), float(d["T_max"]))


def _bounds(cfg):
    lo, hi = cfg["design"]["bounds"]
    return np.array([[lo, hi]] * len(cfg["inductor"]["centers"]), dtype=float)


def _opt_float(v):
    return None if v is None else float(v)


def _model_path(cfg, name):
    return Path(cfg["output_dir"]) / "models" / f"{name}.json"


def _fixed_geometry_problem(cfg, xi=None):
    """Oracle heat source at the Gauss points of the tePINN mesh plus the FD reference."""
    mag, thermal = _solvers(cfg)
    coupled = CoupledSolver(mag, thermal)
    sol = coupled.solve(_geometry(cfg, xi or cfg["tepinn"]["xi"]))
    nx, ny = cfg["tepinn"]["mesh"]
    mesh = build_mesh(C.domain(cfg), nx, ny)
    return mesh, interpolate(sol.Q_plate, mesh.gauss_points), sol


# ---------------------------------------------------------------------------
# commands


def cmd_solve_magnetic(cfg, args):
    mag, _ = _solvers(cfg)
    geom = _geometry(cfg, args.xi)
    A = mag.solve(geom)
    Q = mag.plate_losses(A)
    out = _out(cfg, "magnetic")
    A.save(out / "A.grid")
    Q.save(out / "Q.grid")
    Q.to_csv(out / "Q.csv")
    if args.csv_potential:
        A.to_csv(out / "A.csv")
    summary = {
        "xi": list(geom.xi),
        "total_power_half_plate": total_induced_power(Q),
        "delivered_power_full_plate": mag.delivered_power(A, geom),
        "max_Q": float(Q.values.max()),
        "grid": [int(A.nx), int(A.ny)],
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_solve_thermal(cfg, args):
    mag, thermal = _solvers(cfg)
    if args.q_file:
        Q = GridField.load(args.q_file)
        T = thermal.solve(Q)
        power = total_induced_power(Q)
    else:
        sol = CoupledSolver(mag, thermal).solve(_geometry(cfg, args.xi))
        T, power = sol.T, sol.induced_power
    out = _out(cfg, "thermal")
    T.save(out / "T.grid")
    T.to_csv(out / "T.csv")
    summary = {"max_T": float(T.values.max()), "mean_T": float(T.values.mean()),
               "mean_top_T": float(T.values[:, -1].mean()), "total_power": power}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_gen_dataset(cfg, args):
    mag, _ = _solvers(cfg)
    ds = cfg["dataset"]
    data = generate_dataset(_out(cfg, "dataset"), mag, int(ds["levels"]), int(ds["n_test"]), int(cfg["seed"]))
    failed = [r for r in data.records if r["status"] != "ok"]
    print(json.dumps({"train": len(data.split("train")), "test": len(data.split("test")), "failed": len(failed)}))


def cmd_train(cfg, args):
    seed = int(cfg["seed"])
    models = _out(cfg, "models")
    if args.model == "mnn":
        m = cfg["mnn"]
        data = MagneticDataset.load(Path(cfg["output_dir"]) / "dataset")
        spec = MlpSpec(tuple(m["layers"]), m["activation"])
        model, metrics, hist = train_mnn(data, spec, int(m["epochs"]), int(m["batch_size"]), float(m["lr"]), seed,
                                         C.domain(cfg), _opt_float(m.get("lr_final")))
        save_surrogate(models / "mnn.json", model, metrics=metrics)
        hist.to_csv(models / "mnn_history.csv")
        print(json.dumps(metrics, sort_keys=True))
    elif args.model == "pinn":
        t = cfg["tepinn"]
        mesh, Q, sol = _fixed_geometry_problem(cfg, args.xi)
        spec = MlpSpec(tuple(t["layers"]), t["activation"])
        eta2 = args.eta2 if args.eta2 is not None else float(t["eta2"])
        theta, hist = train_tepinn(mesh, Q, args.loss, spec, C.transform(cfg), int(t["epochs"]), sol.T, eta2,
                                   seed, float(t["lr"]), int(t["checkpoint_every"]),
                                   conductivity=cfg["materials"]["conductivity"], h=cfg["thermal"]["h"],
                                   T0=cfg["thermal"]["T0"])
        save_model(models / f"tepinn_{args.loss}.json", spec, theta, kind="tepinn", loss=args.loss,
                   transform=cfg["transform"], xi=list(sol.geometry.xi))
        hist.to_csv(models / f"tepinn_{args.loss}_history.csv")
        cps = hist.checkpoints()
        print(json.dumps({"final_max_err": cps[-1][1] if cps else None, "epochs_to_1C": hist.epochs_to(1.0)}))
    elif args.model == "hnn":
        h = cfg["thnn"]
        mnn = load_surrogate(_model_path(cfg, "mnn"))
        nx, ny = h["mesh"]
        mesh = build_mesh(C.domain(cfg), nx, ny)
        mag, thermal = _solvers(cfg)
        val = HyperValidation.build(CoupledSolver(mag, thermal), int(h["n_validation"]), seed + 1234)
        hnn, theta, hist = train_thnn(mnn, mesh, MlpSpec(tuple(h["target_layers"]), "tanh"), tuple(h["hidden"]),
                                      int(h["n_xi"]), int(h["epochs"]), float(h["lr"]), seed, float(h["scale"]),
                                      C.transform(cfg), val, conductivity=cfg["materials"]["conductivity"],
                                      h=cfg["thermal"]["h"], T0=cfg["thermal"]["T0"],
                                      lr_final=_opt_float(h.get("lr_final")))
        mae, mx = val.errors(hnn, theta, C.transform(cfg), C.domain(cfg))
        save_hypernetwork(models / "thnn.json", hnn, theta, C.transform(cfg), validation={"mae": mae, "max": mx})
        hist.to_csv(models / "thnn_history.csv")
        print(json.dumps({"validation_mae": mae, "validation_max": mx}))
    elif args.model == "snn":
        s = cfg["snn"]
        ev = FdEvaluator(CoupledSolver(*_solvers(cfg)), _prox_spec(cfg))
        xi = random_designs(int(s["n_train"]), seed + 77)
        temps = np.array([ev.boundary_temperatures(x) for x in xi])
        spec = MlpSpec((xi.shape[1], *s["hidden"], temps.shape[1]), "tanh")
        spec, theta, scaler, stats = train_snn(xi, temps, spec, int(s["epochs"]), lr=float(s["lr"]), seed=seed)
        save_snn(models / "snn.json", spec, theta, scaler, stats)
        print(json.dumps({"n_train": len(xi)}))


def _evaluator(cfg, name):
    spec = _prox_spec(cfg)
    mnn_path = _model_path(cfg, "mnn")
    mnn = load_surrogate(mnn_path) if mnn_path.exists() else None
    if name == "hnn":
        hnn, theta, tr = load_hypernetwork(_model_path(cfg, "thnn"))
        return HnnEvaluator(hnn, theta, tr, C.domain(cfg), spec, mnn)
    if name == "snn":
        return SnnEvaluator(*load_snn(_model_path(cfg, "snn")), mnn=mnn)
    if name == "fd":
        return FdEvaluator(CoupledSolver(*_solvers(cfg)), spec)
    raise C.ConfigError(f"unknown evaluator {name}")


def cmd_evaluate(cfg, args):
    """Hypernetwork and surrogate accuracy against the coupled reference on random designs."""
    hnn, theta, tr = load_hypernetwork(_model_path(cfg, "thnn"))
    val = HyperValidation.build(CoupledSolver(*_solvers(cfg)), args.n, int(cfg["seed"]) + 999)
    mae, mx = val.errors(hnn, theta, tr, C.domain(cfg))
    doc = {"n_geometries": args.n, "temperature_mae": mae, "temperature_max": mx}
    _write_json(_out(cfg, "evaluate") / "thnn_metrics.json", doc)
    print(json.dumps(doc, sort_keys=True))


def cmd_compare_losses(cfg, args):
    t = cfg["tepinn"]
    mesh, Q, sol = _fixed_geometry_problem(cfg)
    spec = MlpSpec(tuple(t["layers"]), t["activation"])
    kw = dict(spec=spec, transform=C.transform(cfg), reference=sol.T, seed=int(cfg["seed"]), lr=float(t["lr"]),
              checkpoint_every=int(t["checkpoint_every"]), conductivity=cfg["materials"]["conductivity"],
              h=cfg["thermal"]["h"], T0=cfg["thermal"]["T0"])
    _, he = train_tepinn(mesh, Q, "energy", epochs=args.energy_epochs or int(t["epochs"]), **kw)
    _, hr = train_tepinn(mesh, Q, "residual", epochs=args.residual_epochs or int(t["epochs"]),
                         eta2=float(t["eta2"]), **kw)
    out = _out(cfg, "compare")
    rows = write_comparison(out / "compare_losses.csv", he, hr)
    summary = {"energy_epochs_to_1C": he.epochs_to(1.0), "residual_epochs_to_1C": hr.epochs_to(1.0),
               "energy_sec_per_epoch": he.mean_epoch_seconds(), "residual_sec_per_epoch": hr.mean_epoch_seconds(),
               "rows": rows}
    print(json.dumps(summary, sort_keys=True))


def write_comparison(path, energy: TrainHistory, residual: TrainHistory) -> int:
    """Checkpoint rows (epoch, energy_err, residual_err, sec/epoch each), epochs strictly increasing."""
    e = dict(energy.checkpoints())
    r = dict(residual.checkpoints())
    epochs = sorted(set(e) | set(r))
    se, sr = energy.mean_epoch_seconds(), residual.mean_epoch_seconds()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "energy_err", "residual_err", "energy_sec_per_epoch", "residual_sec_per_epoch"])
        for ep in epochs:
            w.writerow([ep, repr(e[ep]) if ep in e else "", repr(r[ep]) if ep in r else "", f"{se:.6f}", f"{sr:.6f}"])
    return len(epochs)


def cmd_optimize(cfg, args):
    ev = _evaluator(cfg, args.evaluator)
    spec, bounds, seed = _prox_spec(cfg), _bounds(cfg), int(cfg["seed"])
    out = _out(cfg, "optimize", args.evaluator)
    opt = cfg["optimizer"]
    if args.problem == "prox":
        de = opt["de"]
        res = differential_evolution(prox_objective(ev, spec), bounds, de["pop"], de["generations"], de["F"],
                                     de["CR"], seed)
        write_report(out, "prox", cfg, seed, res, ("f_prox",))
    elif args.problem in ("diff", "constrained"):
        g = opt["gradient"]
        if ev.differentiable:
            res = solve_diff(ev, g["start"], spec, g["tau"], args.problem == "constrained", bounds, g["max_calls"])
        elif args.problem == "diff":
            de = opt["de"]
            res = differential_evolution(diff_objective(ev, spec), bounds, de["pop"], de["generations"], de["F"],
                                         de["CR"], seed)
        else:
            raise C.ConfigError("the constrained problem needs a differentiable evaluator (hnn)")
        write_report(out, args.problem, cfg, seed, res, ("f_diff",))
    else:
        objs = pareto_objectives(ev, spec)
        ns = opt["nsga2"]
        arch = nsga2(objs, bounds, ns["pop"], ns["generations"], seed)
        arch.to_csv(out / "pareto.csv")
        res = OptimizeResult(arch.X[0], float(arch.F[0, 0]), arch.nfev)
        res.extra = {"front_size": len(arch.F)}
        write_report(out, "pareto", cfg, seed, res, ("f_prox",))
    print(json.dumps({"problem": args.problem, "evaluator": args.evaluator, "best_xi": [float(v) for v in res.x],
                      "value": res.fun, "evaluations": res.nfev}, sort_keys=True))


def pareto_objectives(ev, spec):
    return lambda xi: np.array([f_prox(ev.boundary_temperatures(xi), spec), f_ind(xi, ev)], dtype=float)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epinn", description=__doc__.splitlines()[0])
    p.add_argument("--config", help=f"YAML/JSON config file (default: ${C.CONFIG_ENV})")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
    p.add_argument("--output-dir", help="shortcut for --set output_dir=...")
    p.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def xi_arg(sp, required=False):
        sp.add_argument("--xi", type=float, nargs=4, metavar="MM", required=required, help="turn heights (mm)")

    sp = sub.add_parser("solve-magnetic", help="eddy-current solve for one design")
    xi_arg(sp, True)
    sp.add_argument("--csv-potential", action="store_true", help="also write the potential as CSV")
    sp.set_defaults(func=cmd_solve_magnetic)

    sp = sub.add_parser("solve-thermal", help="coupled solve (or thermal solve of a given Q grid)")
    xi_arg(sp)
    sp.add_argument("--q-file", help="binary grid file with the heat source")
    sp.set_defaults(func=cmd_solve_thermal)

    sp = sub.add_parser("gen-dataset", help="factorial magnetic dataset plus random test designs")
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train", help="train a network")
    sp.add_argument("model", choices=["mnn", "pinn", "hnn", "snn"])
    sp.add_argument("--loss", choices=["energy", "residual"], default="energy")
    sp.add_argument("--eta2", type=float)
    xi_arg(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="hypernetwork accuracy on random designs")
    sp.add_argument("--n", type=int, default=30)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("compare-losses", help="energy vs residual loss on the fixed geometry")
    sp.add_argument("--energy-epochs", type=int)
    sp.add_argument("--residual-epochs", type=int)
    sp.set_defaults(func=cmd_compare_losses)

    sp = sub.add_parser("optimize", help="inductor design")
    sp.add_argument("problem", choices=["prox", "diff", "constrained", "pareto"])
    sp.add_argument("--evaluator", choices=["hnn", "snn", "fd"], default="hnn")
    sp.set_defaults(func=cmd_optimize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    try:
        cfg = C.load_config(args.config, overrides)
        C.dump_config(cfg, Path(cfg["output_dir"]) / "config.yaml")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(cfg["threads"])):
            args.func(cfg, args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"config error: missing input {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
