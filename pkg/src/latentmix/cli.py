"""Command-line interface.

Subcommands:

    fit SPECFILE DATA --out ARCHIVE    estimate a model, write a fit archive
    summarytable ARCHIVE...            compare fitted models
    postprob ARCHIVE DATA              posterior class membership per subject
    predict ARCHIVE --profile CSV      class-specific predicted trajectories
    link ARCHIVE                       estimated link transformations
    cuminc ARCHIVE --profile k=v,...   cumulative incidence curves
    dynpred ARCHIVE --history CSV      individual dynamic event predictions
    varexpl ARCHIVE --at k=v,...       variance explained by the latent process
    simulate-check ARCHIVE DATA        redraw outcomes on the fitted designs

Tables are CSV with a header row, floats at 17 significant digits; `--out`
writes to a file, otherwise stdout.  Exit codes: 0 success (fit converged),
2 fit did not converge, 1 hard error.
"""

from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np
import pandas as pd

from .data import LongDataset
from .design import build_model
from .errors import DataError, SpecError
from .fitting import FitSettings, FittedModel, fit, gridsearch
from .initial import init_random
from .postfit import (cumulative_incidence, dynamic_prediction,
                      posterior_probs, predict_link, predict_trajectory,
                      var_explained)
from .simulate import replicate_outcomes
from .specfile import parse_spec_file


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _emit_csv(out_path, header, rows) -> None:
    text = ",".join(header) + "\n"
    text += "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _float_list(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise SpecError(f"{flag}: expected comma-separated numbers") from exc
    if not vals:
        raise SpecError(f"{flag}: no values given")
    return vals


def _pair_dict(text: str, flag: str) -> dict:
    out = {}
    for chunk in text.split(","):
        if not chunk.strip():
            continue
        if "=" not in chunk:
            raise SpecError(f"{flag}: entries look like name=value")
        k, v = chunk.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError as exc:
            raise SpecError(f"{flag}: bad number in {chunk!r}") from exc
    return out


def _load_bound(archive_path, data_path, strict: bool) -> FittedModel:
    fm = FittedModel.load(archive_path)
    data = LongDataset.from_csv(data_path, subject=fm.structure.spec.subject)
    if strict and fm.fingerprint is not None:
        if data.fingerprint().get("sha256") != fm.fingerprint.get("sha256"):
            raise DataError("dataset does not match the archive fingerprint; "
                            "subject-level output needs the fitting dataset")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fm.bind(data)


# -- fit ----------------------------------------------------------------------


def _cmd_fit(args) -> int:
    spec = parse_spec_file(args.specfile)
    data = LongDataset.from_csv(args.data, subject=spec.subject)
    settings = FitSettings(maxiter=args.maxiter, conv_param=args.convB,
                           conv_loglik=args.convL, conv_deriv=args.convG,
                           threads=args.threads, verbose=args.verbose)
    posfix = tuple(int(v) for v in args.posfix.split(",") if v.strip())

    vm = build_model(spec, data)
    if args.gridsearch:
        parts = args.gridsearch.split(",")
        if len(parts) != 2:
            raise SpecError("--gridsearch takes rep,maxiter")
        res = gridsearch(vm, data, rep=int(parts[0]),
                         maxiter_short=int(parts[1]), seed=args.seed,
                         posfix=posfix, settings=settings)
    else:
        init = None
        if args.init != "default":
            if args.init.startswith("from:"):
                init = FittedModel.load(args.init[len("from:"):])
            elif args.init.startswith("random:"):
                src = FittedModel.load(args.init[len("random:"):])
                rng = np.random.Generator(np.random.Philox(key=[args.seed, 0]))
                init = init_random(vm.layout, src.layout, src.theta,
                                   src.vcov, rng)
            else:
                raise SpecError("--init takes default, from:<archive> "
                                "or random:<archive>")
        res = fit(vm, data, init=init, posfix=posfix, settings=settings)

    res.save(args.out)
    print(res.summary_text())
    print(f"\narchive written to {args.out}")
    return 0 if res.converged else 2


# -- summarytable -------------------------------------------------------------


def _cmd_summarytable(args) -> int:
    fits = [(path, FittedModel.load(path)) for path in args.archives]
    prints = {fm.fingerprint.get("sha256") for _, fm in fits
              if fm.fingerprint is not None}
    if len(prints) > 1:
        print("warning: archives come from different datasets", file=sys.stderr)
    maxg = max(fm.layout.ng for _, fm in fits)
    header = ["archive", "classes", "loglik", "n_parameters", "BIC"]
    header += [f"class{g}" for g in range(1, maxg + 1)]
    rows = []
    for path, fm in fits:
        row = [path, fm.layout.ng, float(fm.loglik), fm.n_estimated,
               float(fm.bic)]
        props = fm.class_proportions or ()
        row += [100.0 * props[g] if g < len(props) else None
                for g in range(maxg)]
        rows.append(row)
    _emit_csv(args.out, header, rows)
    return 0


# -- postfit subcommands --------------------------------------------------------


def _cmd_postprob(args) -> int:
    fm = _load_bound(args.archive, args.data, strict=True)
    table = posterior_probs(fm)
    G = fm.layout.ng
    header = ["subject", "assigned"] + [f"prob{g}" for g in range(1, G + 1)]
    rows = [[table.subject_ids[i], int(table.assigned[i]),
             *map(float, table.probs[i])]
            for i in range(len(table.subject_ids))]
    _emit_csv(args.out, header, rows)
    return 0


def _cmd_predict(args) -> int:
    fm = FittedModel.load(args.archive)
    profile = pd.read_csv(args.profile)
    res = predict_trajectory(fm, profile, scale=args.scale,
                             integration=args.integration,
                             ndraws=args.ndraws, draws=args.draws,
                             seed=args.seed)
    times = res["times"]
    G = fm.layout.ng
    header = ["marker", "class", "time", "value"]
    if args.draws > 0:
        header += ["lower", "median", "upper"]
    rows = []
    # latent-scale curves are shared by the markers and keyed by None
    keys = ([(None, "latent")] if args.scale == "latent"
            else [(mk, mk) for mk in fm.structure.spec.outcomes])
    for key, name in keys:
        vals = res["classes"][key]
        for g in range(G):
            for i in range(times.size):
                row = [name, g + 1, float(times[i]), float(vals[g, i])]
                if args.draws > 0:
                    b = res["bands"][key]
                    row += [float(b["lower"][g, i]), float(b["median"][g, i]),
                            float(b["upper"][g, i])]
                rows.append(row)
    _emit_csv(args.out, header, rows)
    return 0


def _cmd_link(args) -> int:
    fm = FittedModel.load(args.archive)
    res = predict_link(fm, nsim=args.nsim, draws=args.draws, seed=args.seed)
    header = ["marker", "value", "median", "lower", "upper"]
    rows = []
    for mk in fm.structure.spec.outcomes:
        if mk not in res["grid"]:
            continue
        grid = res["grid"][mk]
        b = res["bands"][mk]
        for i in range(len(grid)):
            rows.append([mk, float(grid[i]), float(b["median"][i]),
                         float(b["lower"][i]), float(b["upper"][i])])
    _emit_csv(args.out, header, rows)
    return 0


def _cmd_cuminc(args) -> int:
    fm = FittedModel.load(args.archive)
    profile = _pair_dict(args.profile, "--profile")
    times = _float_list(args.times, "--times")
    res = cumulative_incidence(fm, profile, times, draws=args.draws,
                               seed=args.seed)
    P, G = res["per_class"].shape[0], fm.layout.ng
    header = ["cause", "class", "time", "value"]
    if args.draws > 0:
        header += ["lower", "median", "upper"]
    rows = []
    for p in range(P):
        for g in range(G):
            for i, t in enumerate(times):
                rows.append([p + 1, str(g + 1), float(t),
                             float(res["per_class"][p, g, i])]
                            + ([None, None, None] if args.draws > 0 else []))
        for i, t in enumerate(times):
            row = [p + 1, "marginal", float(t), float(res["marginal"][p, i])]
            if args.draws > 0:
                row += [float(res["bands"][name][p, i])
                        for name in ("lower", "median", "upper")]
            rows.append(row)
    _emit_csv(args.out, header, rows)
    return 0


def _cmd_dynpred(args) -> int:
    fm = FittedModel.load(args.archive)
    spec = fm.structure.spec
    frame = pd.read_csv(args.history)
    if spec.subject in frame.columns:
        if frame[spec.subject].nunique() > 1:
            raise DataError("history file holds more than one subject")
        frame = frame.drop(columns=[spec.subject])
    landmarks = _float_list(args.landmarks, "--landmarks")
    horizons = _float_list(args.horizons, "--horizons")
    res = dynamic_prediction(fm, frame, landmarks, horizons, cause=args.cause,
                             draws=args.draws, seed=args.seed)
    header = ["landmark", "horizon", "probability"]
    if args.draws > 0:
        header += ["lower", "median", "upper"]
    rows = []
    for a, s in enumerate(landmarks):
        for b, h in enumerate(horizons):
            row = [float(s), float(h), float(res["probability"][a, b])]
            if args.draws > 0:
                row += [float(res["bands"][name][a, b])
                        for name in ("lower", "median", "upper")]
            rows.append(row)
    _emit_csv(args.out, header, rows)
    return 0


def _cmd_varexpl(args) -> int:
    fm = FittedModel.load(args.archive)
    res = var_explained(fm, _pair_dict(args.at, "--at"))
    header = ["marker", "class", "percent"]
    rows = [[mk, g + 1, float(res[mk][g])]
            for mk in fm.structure.spec.outcomes
            for g in range(fm.layout.ng)]
    _emit_csv(args.out, header, rows)
    return 0


def _cmd_simulate_check(args) -> int:
    fm = _load_bound(args.archive, args.data, strict=True)
    cols = replicate_outcomes(fm, seed=args.seed)
    header = list(cols)
    rows = list(zip(*cols.values()))
    _emit_csv(args.out, header, rows)
    return 0


# -- argument wiring ------------------------------------------------------------


def _add_out(p):
    p.add_argument("--out", default=None, help="write the table to this file")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentmix",
        description="latent class mixed models: estimation and post-fit tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate a model and write a fit archive")
    p.add_argument("specfile")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="archive output path")
    _add_seed(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--maxiter", type=int, default=500)
    p.add_argument("--convB", type=float, default=1e-4,
                   help="parameter-stability threshold")
    p.add_argument("--convL", type=float, default=1e-4,
                   help="log-likelihood-stability threshold")
    p.add_argument("--convG", type=float, default=1e-4,
                   help="gradient threshold")
    p.add_argument("--gridsearch", metavar="REP,MAXITER", default=None,
                   help="multistart from REP random perturbations")
    p.add_argument("--init", default="default",
                   help="default, from:<archive> or random:<archive>")
    p.add_argument("--posfix", default="",
                   help="comma-separated 1-based positions held fixed")
    p.add_argument("--verbose", action="store_true",
                   help="print per-iteration progress to stderr")
    p.set_defaults(run=_cmd_fit)

    p = sub.add_parser("summarytable", help="compare fitted models")
    p.add_argument("archives", nargs="+")
    _add_out(p)
    p.set_defaults(run=_cmd_summarytable)

    p = sub.add_parser("postprob", help="posterior class membership")
    p.add_argument("archive")
    p.add_argument("data")
    _add_out(p)
    p.set_defaults(run=_cmd_postprob)

    p = sub.add_parser("predict", help="predicted trajectories for a profile")
    p.add_argument("archive")
    p.add_argument("--profile", required=True,
                   help="CSV of covariate values over time")
    p.add_argument("--scale", choices=("outcome", "latent"), default="outcome")
    p.add_argument("--integration", choices=("mc", "gh"), default="mc")
    p.add_argument("--ndraws", type=int, default=2000,
                   help="Monte Carlo draws for outcome-scale integration")
    p.add_argument("--draws", type=int, default=0,
                   help="parameter draws for confidence bands (0 = none)")
    _add_seed(p)
    _add_out(p)
    p.set_defaults(run=_cmd_predict)

    p = sub.add_parser("link", help="estimated link transformations")
    p.add_argument("archive")
    p.add_argument("--nsim", type=int, default=100,
                   help="grid points per marker")
    p.add_argument("--draws", type=int, default=2000)
    _add_seed(p)
    _add_out(p)
    p.set_defaults(run=_cmd_link)

    p = sub.add_parser("cuminc", help="cumulative incidence curves")
    p.add_argument("archive")
    p.add_argument("--profile", required=True, help="covariates as k=v,...")
    p.add_argument("--times", required=True, help="comma-separated times")
    p.add_argument("--draws", type=int, default=0)
    _add_seed(p)
    _add_out(p)
    p.set_defaults(run=_cmd_cuminc)

    p = sub.add_parser("dynpred", help="dynamic individual event predictions")
    p.add_argument("archive")
    p.add_argument("--history", required=True,
                   help="CSV with one subject's observations")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--horizons", required=True)
    p.add_argument("--cause", type=int, default=1)
    p.add_argument("--draws", type=int, default=0)
    _add_seed(p)
    _add_out(p)
    p.set_defaults(run=_cmd_dynpred)

    p = sub.add_parser("varexpl", help="variance explained by the latent process")
    p.add_argument("archive")
    p.add_argument("--at", required=True,
                   help="covariate/time values as k=v,...")
    _add_out(p)
    p.set_defaults(run=_cmd_varexpl)

    p = sub.add_parser("simulate-check",
                       help="redraw outcomes on the fitted subject designs")
    p.add_argument("archive")
    p.add_argument("data")
    _add_seed(p)
    _add_out(p)
    p.set_defaults(run=_cmd_simulate_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
