"""Command-line interface: simulate, fit, select, predict, diagnose.

Every command prints a JSON document on stdout and exits 0 on success; on
failure a JSON error object goes to stderr and the exit code is nonzero
(2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io, simgen
from .errors import BSMError, ValidationError
from .mcmc import McmcConfig, gelman_rubin, run_chains
from .model import ModelConfig
from .predict import (MODE_BSM, MODE_REFERENCE, PosteriorDraws, accuracy_curve, classify,
                      select_model)

# run lengths used when a config file does not say otherwise
DEFAULT_MCMC = {"n_chains": 3, "n_burnin": 5000, "n_samples": 3000, "thin": 1,
                "pseudo_prior": "pilot", "n_pilot": 1000}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(doc):
    sys.stdout.write(io.dump_json(doc, indent=1) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    preset = simgen.make_preset(args.preset, seed=args.seed)
    groups = preset.groups
    if args.params:
        # one parameter set per participant, participant 0 first
        groups = simgen.load_param_file(args.params)
        base = preset.scenario
        preset.scenario = simgen.ScenarioSpec(tuple(range(1, len(groups))), base.train_chars,
                                              base.train_seqs, base.test_chars, base.test_seqs,
                                              seed=args.seed)
    train, test = simgen.gen_dataset(preset.scenario, groups, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset(train, out / "train.csv")
    io.write_dataset(type(train)([test]), out / "test.csv")
    config = {"preset": args.preset, "seed": args.seed, "model": preset.model.to_dict(),
              "mcmc": dict(DEFAULT_MCMC, seed=args.seed)}
    io.dump_json(config, out / "config.json", indent=1)
    doc = {"command": "simulate", "preset": args.preset, "seed": args.seed,
           "files": ["train.csv", "test.csv", "config.json"],
           "participants": train.N + 1, "E": train.E, "T0": train.T0}
    _emit(doc)


def _load_config(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})", rule="schema") from None


def _model_config(cfg, dataset):
    if "model" in cfg:
        return ModelConfig.from_dict(cfg["model"])
    if "preset" in cfg:
        return simgen.make_preset(cfg["preset"]).model
    if dataset.E == 1:
        return ModelConfig.single_channel(T0=dataset.T0)
    return ModelConfig.multi_channel(E=dataset.E, T0=dataset.T0)


def _mcmc_config(cfg, args):
    d = dict(DEFAULT_MCMC)
    d.update(cfg.get("mcmc", {}))
    for flag, key in (("chains", "n_chains"), ("burnin", "n_burnin"), ("samples", "n_samples"),
                      ("thin", "thin"), ("seed", "seed"), ("pseudo_prior", "pseudo_prior"),
                      ("pilot", "n_pilot")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    if d.get("pseudo_prior") == "pilot":
        d["n_pilot"] = min(d.get("n_pilot", 0) or d["n_burnin"] // 2, d["n_burnin"])
        if d["n_pilot"] == 0:
            d["pseudo_prior"] = "prior"
    return McmcConfig(**d)


def _psrf_table(traces):
    if len(traces) < 2:
        return {}
    return gelman_rubin(traces, on_degenerate="nan")


def cmd_fit(args):
    dataset = io.read_dataset(args.data)
    cfg = _load_config(args.config)
    mc = _model_config(cfg, dataset)
    mcmc = _mcmc_config(cfg, args)
    if args.new_seqs is not None:
        dataset = dataset.with_new_sequences(args.new_seqs)
    bsm = run_chains(mcmc, dataset, mc)
    ref = run_chains(mcmc, dataset.reference(), mc)
    psrf = {"bsm": _psrf_table(bsm), "reference": _psrf_table(ref)}
    decision = select_model(bsm, mc.delta_z)
    extra = {"psrf": psrf, "decision": decision.to_dict(), "new_seqs": args.new_seqs}
    io.write_fit(args.out, mc, mcmc, bsm, ref, extra)
    doc = {"command": "fit", "out": str(args.out), "chains": mcmc.n_chains,
           "n_burnin": mcmc.n_burnin, "n_samples": mcmc.n_samples,
           "match_means": decision.match_means, "decision": decision.mode, "psrf": psrf}
    if args.results:
        b1, b0 = mc.bases()
        draws = PosteriorDraws(bsm if decision.mode == MODE_BSM else ref, b1, b0)
        io.write_results(_bundle(bsm, ref, decision, psrf, {}, draws), args.results)
    _emit(doc)


def _bundle(bsm, ref, decision, psrf, accuracy, draws, extra=None):
    summaries = {}
    for label, traces in (("bsm", bsm), ("reference", ref)):
        if traces:
            sc = {k: np.concatenate([t.scalars()[k] for t in traces]) for k in traces[0].scalars()}
            summaries[label] = {k: io.summarize(v) for k, v in sc.items()}
    return io.ResultBundle(summaries=summaries, match_probs=list(decision.match_means), psrf=psrf,
                           decisions=decision.to_dict(), accuracy=accuracy,
                           erp=draws.erp_summary(), extra=extra or {})


def cmd_select(args):
    doc, bsm, _ = io.read_fit(args.trace)
    delta = args.delta_z if args.delta_z is not None else doc["model"]["delta_z"]
    _emit({"command": "select", **select_model(bsm, delta).to_dict()})


def cmd_predict(args):
    doc, bsm, ref = io.read_fit(args.trace)
    mc = ModelConfig.from_dict(doc["model"])
    b1, b0 = mc.bases()
    test = io.read_dataset(args.test)
    decision = select_model(bsm, mc.delta_z)
    mode = {"auto": decision.mode, "bsm": MODE_BSM, "reference": MODE_REFERENCE}[args.mode]
    chosen = bsm if mode == MODE_BSM else ref
    if not chosen:
        raise ValidationError(f"fit file has no {mode} chains", rule="schema")
    draws = PosteriorDraws(chosen, b1, b0, thin=args.thin)
    curve, posts = accuracy_curve(test[0], draws, args.max_seqs, return_posteriors=True)
    chars = [{"truth": truth, "predicted": [classify(p) for p in row],
              "probs": np.round(row[-1].probs, 6)} for truth, row in posts]
    accuracy = {mode: curve}
    if args.mode == "auto":
        accuracy = {"BSM-Mixture": curve}
    out = {"command": "predict", "mode": args.mode, "mode_used": mode,
           "decision": decision.to_dict(), "accuracy": curve, "characters": chars}
    if args.out:
        io.write_results(_bundle(bsm, ref, decision, doc.get("psrf", {}), accuracy, draws,
                                 {"characters": chars, "mode_used": mode}), args.out)
    _emit(out)


def cmd_diagnose(args):
    paths = args.traces.split(",")
    table, pooled_bsm, pooled_ref = {}, [], []
    for path in paths:
        _, bsm, ref = io.read_fit(path)
        table[path] = {"bsm": _psrf_table(bsm), "reference": _psrf_table(ref)}
        pooled_bsm += bsm
        pooled_ref += ref
    if len(paths) > 1:
        table["pooled"] = {"bsm": _psrf_table(pooled_bsm), "reference": _psrf_table(pooled_ref)}
    _emit({"command": "diagnose", "psrf": table})


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="bsmatch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset from a preset")
    s.add_argument("--preset", required=True, choices=simgen.PRESETS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--params", help="JSON parameter file overriding the preset's participants")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit the matching model and the reference model")
    f.add_argument("--data", required=True)
    f.add_argument("--config")
    f.add_argument("--chains", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--samples", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--pseudo-prior", dest="pseudo_prior", choices=("prior", "pilot"))
    f.add_argument("--pilot", type=int, help="pilot sweeps (within burn-in) for the pseudo-prior")
    f.add_argument("--new-seqs", dest="new_seqs", type=int,
                   help="use only the first k training sequences of the new participant")
    f.add_argument("--out", required=True, help="fit file (JSON)")
    f.add_argument("--results", help="optional results directory")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("select", help="choose between the borrowing and reference fits")
    c.add_argument("--trace", required=True)
    c.add_argument("--delta-z", dest="delta_z", type=float)
    c.set_defaults(func=cmd_select)

    r = sub.add_parser("predict", help="character prediction and accuracy curves")
    r.add_argument("--trace", required=True)
    r.add_argument("--test", required=True)
    r.add_argument("--mode", choices=("auto", "bsm", "reference"), default="auto")
    r.add_argument("--max-seqs", dest="max_seqs", type=int, default=5)
    r.add_argument("--thin", type=int, default=1)
    r.add_argument("--out", help="optional results directory")
    r.set_defaults(func=cmd_predict)

    d = sub.add_parser("diagnose", help="Gelman-Rubin table")
    d.add_argument("--traces", required=True, help="comma-separated fit files")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except UsageError as exc:
        err = {"error": "UsageError", "message": str(exc)}
        code = 2
    except ValidationError as exc:
        err, code = exc.to_dict(), 1
    except (BSMError, ValueError) as exc:
        err, code = {"error": type(exc).__name__, "message": str(exc)}, 1
    except OSError as exc:
        err, code = {"error": "IOError", "message": str(exc)}, 1
    sys.stderr.write(json.dumps(err) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
