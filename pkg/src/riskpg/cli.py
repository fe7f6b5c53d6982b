"""Command-line entry point.

Every subcommand needs ``--seed`` and writes into a fresh ``--out``
directory; an existing directory is an error rather than something to
append to. Failures print a JSON error record on stderr and exit with the
code attached to the error class.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from typing import List, Optional

import numpy as np

from . import envs
from . import gradients as G
from . import losses as L
from . import mdp as M
from . import oracles as O
from . import policy as pol
from . import rapg
from . import risk as R
from .errors import ArgumentError, OutputError, ParseError, RiskPGError

log = logging.getLogger("riskpg")


# -- risk spec grammar -------------------------------------------------------

def _key_value(token: str):
    key, eq, value = token.partition("=")
    if not eq or not key or not value:
        raise ParseError(f"expected key=value, got {token!r}")
    return key.strip(), value.strip()


def _number(key: str, value: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise ParseError(f"parameter {key!r} has non-numeric value {value!r}")
    if not math.isfinite(x):
        raise ParseError(f"parameter {key!r} must be finite, got {value!r}")
    return x


def parse_risk_spec(text: str) -> R.RiskSpec:
    """Parse ``expectile:nu=..``, ``ubsr:loss=NAME[:p=..],lambda=..`` or ``oce:loss=NAME[:p=..]``."""
    kind, _, rest = text.strip().partition(":")
    tokens = [t for t in rest.replace(":", ",").split(",") if t.strip()]
    if kind == R.EXPECTILE:
        params = dict(_key_value(t) for t in tokens)
        if set(params) != {"nu"}:
            raise ParseError(f"expectile takes exactly nu=..., got {rest!r}")
        return R.RiskSpec.expectile(_number("nu", params["nu"]))
    if kind not in (R.UBSR, R.OCE):
        raise ParseError(f"unknown risk kind {kind!r}; expected expectile, ubsr or oce")
    if not tokens:
        raise ParseError(f"{kind} needs loss=NAME")
    key, name = _key_value(tokens[0])
    if key != "loss":
        raise ParseError(f"{kind} spec must start with loss=NAME, got {tokens[0]!r}")
    if name not in L.CONSTRUCTORS:
        raise ParseError(f"unknown loss {name!r}; known: {', '.join(sorted(L.CONSTRUCTORS))}")
    loss_params, lam = {}, None
    for token in tokens[1:]:
        key, value = _key_value(token)
        if key == "lambda" and kind == R.UBSR:
            lam = _number(key, value)
        elif key in L.CONSTRUCTORS[name][1]:
            loss_params[key] = _number(key, value)
        else:
            raise ParseError(f"unexpected parameter {token!r} for {kind} with loss {name!r}")
    loss = L.make_loss(name, **loss_params)
    if kind == R.UBSR:
        if lam is None:
            raise ParseError("ubsr needs lambda=...")
        return R.RiskSpec.ubsr(loss, lam)
    return R.RiskSpec.oce(loss)


# -- inputs ------------------------------------------------------------------

def read_samples(path: str, negate: bool = False) -> np.ndarray:
    """One real per line; blank lines and ``#`` comments are skipped."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not a number: {line!r}")
    if not values:
        raise ParseError(f"{path}: no samples")
    x = np.asarray(values)
    return -x if negate else x


def read_dist(path: str, negate: bool = False) -> R.DiscreteDist:
    """JSON ``{"atoms": [[value, prob], ...]}``."""
    with open(path) as fh:
        try:
            data = json.load(fh)
            atoms = [(float(v), float(p)) for v, p in data["atoms"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: expected {{\"atoms\": [[value, prob], ...]}} ({exc})")
    if negate:
        atoms = [(-v, p) for v, p in atoms]
    return R.DiscreteDist.from_atoms(atoms)


def _load_spec(args) -> M.MdpSpec:
    if args.mdp and args.env:
        raise ArgumentError("give either --mdp or --env, not both")
    if args.env:
        spec = envs.get_entry(args.env).build()
        if args.reward:
            spec = M.mdp_from_dict(M.mdp_to_dict(spec), negate_costs=True)
        return spec
    if not args.mdp:
        raise ArgumentError("an MDP is required: --mdp FILE or --env NAME")
    return M.load_mdp(args.mdp, negate_costs=args.reward)


def _policy(spec: M.MdpSpec, kind: str) -> pol.PolicySpec:
    return spec.tabular_policy() if kind == "tabular" else spec.feature_policy()


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ParseError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    out = _float_list(text)
    if any(int(v) != v for v in out):
        raise ParseError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in out]


def _theta(args, policy: pol.PolicySpec, rng: np.random.Generator) -> np.ndarray:
    if args.theta:
        return pol.check_params(policy, _float_list(args.theta))
    return rng.normal(size=policy.dims)


# -- outputs -----------------------------------------------------------------

def _fresh_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=False)
    except FileExistsError:
        raise OutputError(f"output directory {path!r} already exists; runs never append")
    return path


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _error_record(exc: BaseException, code: int) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if getattr(exc, "iteration", None) is not None:
        rec["iteration"] = exc.iteration
    return rec


# -- subcommands -------------------------------------------------------------

def _weighted_residual(risk: R.RiskSpec, dist: R.DiscreteDist, estimate: float, kstar=None) -> float:
    x, p = dist.values, dist.probs
    if risk.kind == R.EXPECTILE:
        return float(L.expectile_l(risk.nu).eval(x - estimate) @ p)
    if risk.kind == R.UBSR:
        return float(risk.loss.eval(x - estimate) @ p - risk.lam)
    return float(risk.loss.deriv(x - kstar) @ p - 1.0)


def cmd_estimate(args) -> dict:
    risk = parse_risk_spec(args.risk)
    if bool(args.samples) == bool(args.dist):
        raise ArgumentError("give exactly one of --samples or --dist")
    out = {"risk": risk.describe(), "seed": args.seed, "tol": args.tol}
    if args.samples:
        x = read_samples(args.samples, args.reward)
        out.update(source="samples", n=int(x.size))
        if risk.kind == R.OCE:
            est, kstar = R.empirical_oce(x, risk.loss, args.tol)
            out.update(estimate=est, kstar=kstar)
        else:
            est = risk.empirical(x, args.tol)
            out["estimate"] = est
        out["residual"] = risk.residual(x, est)
    else:
        dist = read_dist(args.dist, args.reward)
        out.update(source="dist", n=int(dist.values.size))
        kstar = None
        if risk.kind == R.OCE:
            est, kstar = R.exact_oce(dist, risk.loss, args.tol)
            out["kstar"] = kstar
        else:
            est = risk.exact(dist, args.tol)
        out["estimate"] = est
        out["residual"] = _weighted_residual(risk, dist, est, kstar)
    _write_json(os.path.join(_fresh_dir(args.out), "estimate.json"), out)
    return out


def cmd_grad_check(args) -> dict:
    risk = parse_risk_spec(args.risk)
    spec = _load_spec(args)
    policy = _policy(spec, args.policy)
    rng = np.random.default_rng(args.seed)
    theta = _theta(args, policy, rng)
    exact = G.exact_gradient(spec, policy, theta, risk)
    fd = O.finite_difference_gradient(lambda t: G.exact_risk(spec, policy, t, risk), theta, args.fd_step)
    reps = O.gradient_replications(spec, policy, theta, risk, args.m, args.replications, rng)
    mean, half = O.replication_mean_ci(reps, z=4.0)
    scale = max(np.max(np.abs(exact)), 1e-12)
    out = {
        "risk": risk.describe(),
        "seed": args.seed,
        "theta": theta.tolist(),
        "exact_gradient": exact.tolist(),
        "fd_gradient": fd.tolist(),
        "estimator_mean": mean.tolist(),
        "estimator_ci_halfwidth": half.tolist(),
        "m": args.m,
        "replications": args.replications,
        "max_fd_relative_error": float(np.max(np.abs(exact - fd)) / scale),
        "max_estimator_deviation": float(np.max(np.abs(mean - exact))),
        "estimator_within_ci": bool(np.all(np.abs(mean - exact) <= half)),
    }
    _write_json(os.path.join(_fresh_dir(args.out), "gradcheck.json"), out)
    return out


def cmd_mse_bench(args) -> dict:
    risk = parse_risk_spec(args.risk)
    m_list = _int_list(args.m_list)
    rng = np.random.default_rng(args.seed)
    if args.target == "gradient":
        spec = _load_spec(args)
        policy = _policy(spec, args.policy)
        theta = _theta(args, policy, rng)
        truth = G.exact_gradient(spec, policy, theta, risk)
        est = O.gradient_estimator(spec, policy, theta, risk)
        label = f"gradient[{risk.describe()}]"
    elif args.dist:
        dist = read_dist(args.dist, args.reward)
        truth = risk.exact(dist)
        est = O.sample_estimator(lambda g, shape: dist.sample(g, shape), risk.empirical)
        label = f"risk[{risk.describe()}]"
    else:
        spec = _load_spec(args)
        policy = _policy(spec, args.policy)
        theta = _theta(args, policy, rng)
        truth = G.exact_risk(spec, policy, theta, risk)
        est = O.sample_estimator(O.markov_return_sampler(spec, policy, theta), risk.empirical)
        label = f"risk[{risk.describe()}]"
    curve = O.mse_curve(est, truth, m_list, args.replications, rng, label)
    out_dir = _fresh_dir(args.out)
    _write_csv(os.path.join(out_dir, "mse.csv"), ["m", "mse", "replications"], curve.points)
    summary = dict(curve.to_dict(), seed=args.seed, truth=np.atleast_1d(truth).tolist())
    _write_json(os.path.join(out_dir, "mse.json"), summary)
    return summary


def _schedule(text: Optional[str], kind):
    return None if text is None else kind(text)


def _rapg_config(args, risk) -> rapg.RapgConfig:
    box = None
    if args.box:
        lo_hi = _float_list(args.box)
        if len(lo_hi) != 2:
            raise ParseError(f"--box needs lo,hi, got {args.box!r}")
        box = tuple(lo_hi)
    return rapg.RapgConfig(
        num_iterations=args.iterations, risk=risk, seed=args.seed,
        step_size=_schedule(args.step_size, float), batch_size=_schedule(args.batch_size, int),
        projection_box=box,
    )


def cmd_train(args) -> dict:
    risk = parse_risk_spec(args.risk)
    spec = _load_spec(args)
    policy = _policy(spec, args.policy)
    config = _rapg_config(args, risk)
    theta0 = pol.check_params(policy, _float_list(args.theta)) if args.theta else np.zeros(policy.dims)
    out_dir = _fresh_dir(args.out)
    try:
        record = rapg.run_rapg(spec, policy, theta0, config)
    except rapg.RunAborted as exc:
        _write_json(os.path.join(out_dir, "run_record.json"), exc.record.to_dict())
        raise
    d = record.to_dict()
    _write_json(os.path.join(out_dir, "run_record.json"), d)
    rows = [(i, r, g) for i, (r, g) in enumerate(zip(record.risk_estimates, record.grad_norm_sq), 1)]
    _write_csv(os.path.join(out_dir, "trace.csv"), ["iteration", "risk_estimate", "grad_norm_sq"], rows)
    return {k: d[k] for k in ("selected_index", "selected_theta", "total_trajectories", "status")}


def cmd_report(args) -> dict:
    risk = parse_risk_spec(args.risk)
    spec = _load_spec(args)
    policy = _policy(spec, args.policy)
    args.iterations = 1
    config = _rapg_config(args, risk)
    theta0 = pol.check_params(policy, _float_list(args.theta)) if args.theta else None
    rep = rapg.stationarity_report(spec, policy, config, args.num_seeds, _int_list(args.n_grid), theta0,
                                   over_iterates=args.over_iterates)
    out_dir = _fresh_dir(args.out)
    d = dict(rep.to_dict(), seed=args.seed, num_seeds=args.num_seeds)
    _write_json(os.path.join(out_dir, "report.json"), d)
    _write_csv(os.path.join(out_dir, "report.csv"), ["N", "mean_grad_norm_sq", "ci_halfwidth"],
               [(p.num_iterations, p.mean, p.ci_halfwidth) for p in rep.points])
    return d


def cmd_export_env(args) -> dict:
    spec = envs.get_entry(args.name).build()
    if os.path.exists(args.out):
        raise OutputError(f"{args.out!r} already exists")
    M.save_mdp(spec, args.out)
    return {"name": args.name, "path": args.out}


# -- parser ------------------------------------------------------------------

def _mdp_args(p, policy=True):
    p.add_argument("--mdp", help="MDP spec file (JSON)")
    p.add_argument("--env", help="catalogue environment name instead of --mdp")
    if policy:
        p.add_argument("--policy", choices=("tabular", "feature"), default="tabular")
    p.add_argument("--theta", help="comma-separated parameters (default: drawn from the seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskpg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        if name != "export-env":
            p.add_argument("--seed", type=int, required=True)
            p.add_argument("--out", required=True, help="fresh output directory")
            p.add_argument("--reward", action="store_true", help="inputs are rewards; negate to costs")
        return p

    p = add("estimate", cmd_estimate, "risk of a sample file or a finite distribution")
    p.add_argument("--risk", required=True)
    p.add_argument("--samples")
    p.add_argument("--dist")
    p.add_argument("--tol", type=float, default=R.DEFAULT_TOL)

    p = add("grad-check", cmd_grad_check, "exact vs finite-difference vs sampled gradient")
    p.add_argument("--risk", required=True)
    _mdp_args(p)
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--fd-step", type=float, default=1e-5)

    p = add("mse-bench", cmd_mse_bench, "MSE of an estimator against its exact value")
    p.add_argument("--risk", required=True)
    p.add_argument("--target", choices=("risk", "gradient"), default="gradient")
    _mdp_args(p)
    p.add_argument("--dist", help="distribution file (risk target only)")
    p.add_argument("--m-list", default="100,1000,10000")
    p.add_argument("--replications", type=int, default=O.DEFAULT_REPLICATIONS)

    for name, func, help_ in (("train", cmd_train, "run RAPG"),
                              ("report", cmd_report, "stationarity report over seeds")):
        p = add(name, func, help_)
        p.add_argument("--risk", required=True)
        _mdp_args(p)
        p.add_argument("--step-size", help="constant step size (default 1/sqrt(N))")
        p.add_argument("--batch-size", help="constant batch size (default ceil(sqrt(N)))")
        p.add_argument("--box", help="projection box lo,hi (write --box=-1,1 for negative lo)")
        if name == "train":
            p.add_argument("--iterations", "-N", type=int, required=True)
        else:
            p.add_argument("--num-seeds", type=int, default=20)
            p.add_argument("--n-grid", default="100,400,1600")
            p.add_argument("--over-iterates", action="store_true",
                           help="also average the exact |grad|^2 over all iterates of each run")

    p = add("export-env", cmd_export_env, "write a catalogue environment as an MDP file")
    p.add_argument("name", choices=[e.name for e in envs.catalog()])
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except RiskPGError as exc:
        print(json.dumps(_error_record(exc, exc.exit_code)), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps(_error_record(exc, OutputError.exit_code)), file=sys.stderr)
        return OutputError.exit_code
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
