"""Command line interface.

Every experiment subcommand reads a JSON config (``--config``), applies
``--set key.sub=value`` overrides and exits with status 0 only when all
invariant assertions of the run passed (1 otherwise, 2 on a bad config).
"""
from __future__ import annotations

import argparse
import json
import sys

from .harness.config import ConfigError, load_config

__all__ = ["main"]


def _parse_set(items) -> dict:
    out: dict = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            v = json.loads(val)
        except json.JSONDecodeError:
            v = val
        d = out
        parts = key.split(".")
        for p in parts[:-1]:
            d = d.setdefault(p, {})
        d[parts[-1]] = v
    return out


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (JSON value)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--master-seed", type=int, help="master seed")
    p.add_argument("--lattice", help="lattice spec d=2,L=64,cm=2,law=uniform,seed=...")


def _build(args, experiment: str):
    over = _parse_set(args.set)
    over["experiment"] = experiment
    if args.out:
        over["output_dir"] = args.out
    if args.seeds is not None:
        over["n_seeds"] = args.seeds
    if args.master_seed is not None:
        over["master_seed"] = args.master_seed
    if args.lattice:
        lat = {}
        for part in args.lattice.split(","):
            k, _, v = part.partition("=")
            k = k.strip()
            if k in ("d", "L", "seed"):
                lat[k] = int(v)
            elif k == "cm":
                lat[k] = float(v)
            elif k in ("law", "boundary"):
                lat[k] = v.strip()
            elif k:
                raise ConfigError(f"unknown lattice key {k!r}")
        over["lattice"] = lat
    return load_config(args.config, over)


def _finish(res) -> int:
    print(json.dumps({"experiment": res.name, "ok": res.ok, "files": res.files[-2:]}, indent=2))
    return 0 if res.ok else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lipsurf", description="Lipschitz surfaces from Poisson random walks")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, hlp in (("run", "surface pipeline"), ("tail", "hill radius tail"), ("infect", "infection speed"),
                      ("surround", "surrounding frequencies"), ("mixing", "local mixing domination check")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        if name == "tail":
            p.add_argument("--r-max", type=int)
        if name == "infect":
            p.add_argument("--t-end", type=float)
        if name == "surround":
            p.add_argument("--radii", help="comma-separated radii")
    pt = sub.add_parser("tess", help="tessellation utilities")
    tsub = pt.add_subparsers(dest="tcmd", required=True)
    pd = tsub.add_parser("dump", help="print the ladder table as CSV")
    pd.add_argument("--config")
    pd.add_argument("--set", action="append", metavar="KEY=VALUE")
    pd.add_argument("--nu", type=float, help="estimate of nu for the scale-1 weight")
    pr = sub.add_parser("report", help="text report and plots from an output directory")
    pr.add_argument("--dir", required=True)
    pr.add_argument("--out")
    pr.add_argument("--no-plots", action="store_true")
    args = ap.parse_args(argv)

    try:
        if args.cmd == "report":
            from .harness.report import make_report
            print(json.dumps(make_report(args.dir, args.out, not args.no_plots), indent=2))
            return 0
        if args.cmd == "tess":
            from .harness.weights import psi_ladder
            cfg = load_config(args.config, _parse_set(args.set))
            print("k,ell_k,beta_k,eps_k,psi_k")
            for k, lk, bk, ek, psi in psi_ladder(cfg.schema, args.nu):
                print(f"{k},{lk},{bk},{ek},{'' if psi is None else repr(psi)}")
            return 0
        cfg = _build(args, args.cmd)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    from .harness import experiments as X
    if args.cmd == "run":
        return _finish(X.run_pipeline(cfg))
    if args.cmd == "tail":
        return _finish(X.tail_experiment(cfg, args.r_max))
    if args.cmd == "infect":
        return _finish(X.infection_experiment(cfg, args.t_end))
    if args.cmd == "surround":
        radii = [int(r) for r in args.radii.split(",")] if args.radii else None
        return _finish(X.surrounding_experiment(cfg, radii))
    return _finish(X.mixing_experiment(cfg))


if __name__ == "__main__":
    sys.exit(main())
