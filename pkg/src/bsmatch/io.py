"""File formats: long-format epoch CSV, fit (trace) JSON and result bundles.

Epoch CSV columns::

    participant,char_idx,seq_idx,stim_idx,stim_code,stim_type,channel,t,value

``participant``, ``char_idx``, ``seq_idx`` and ``stim_idx`` are 0-based;
``channel`` and ``t`` are 1-based; ``stim_code`` is 1..12.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rcp
from .errors import ValidationError
from .mcmc import ChainTrace
from .model import Dataset, ParticipantData

CSV_HEADER = ["participant", "char_idx", "seq_idx", "stim_idx", "stim_code", "stim_type",
              "channel", "t", "value"]
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# epoch CSV
# ---------------------------------------------------------------------------

def write_dataset(dataset: Dataset, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for n, p in enumerate(dataset.participants):
            E, T = p.X.shape[1:] if len(p) else (0, 0)
            for i in range(len(p)):
                head = [n, int(p.char_idx[i]), int(p.seq_idx[i]), int(p.stim_idx[i]),
                        int(p.code[i]), int(p.y[i])]
                x = p.X[i]
                for e in range(E):
                    for t in range(T):
                        w.writerow(head + [e + 1, t + 1, repr(float(x[e, t]))])


def _int(v, row, name):
    try:
        return int(v)
    except ValueError:
        raise ValidationError(f"row {row}: {name}={v!r} is not an integer", rule="schema",
                              row=row) from None


def read_dataset(path) -> Dataset:
    """Parse and validate a long-format epoch CSV.

    Row numbers in errors count the header as row 1.
    """
    path = Path(path)
    epochs = {}
    with path.open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != CSV_HEADER:
            raise ValidationError(f"header must be {','.join(CSV_HEADER)}", rule="schema", row=1)
        for row_no, row in enumerate(r, start=2):
            if len(row) != len(CSV_HEADER):
                raise ValidationError(f"row {row_no}: expected {len(CSV_HEADER)} fields, got {len(row)}",
                                      rule="schema", row=row_no)
            part, ci, si, ji, code, typ, ch, t = (_int(v, row_no, k) for v, k in zip(row[:8], CSV_HEADER))
            try:
                value = float(row[8])
            except ValueError:
                raise ValidationError(f"row {row_no}: value={row[8]!r} is not a number", rule="schema",
                                      row=row_no) from None
            if min(part, ci, si, ji) < 0 or ch < 1 or t < 1:
                raise ValidationError(f"row {row_no}: negative index or channel/t below 1",
                                      rule="schema", row=row_no)
            if typ not in (0, 1):
                raise ValidationError(f"row {row_no}: stim_type must be 0 or 1", rule="schema", row=row_no)
            key = (part, ci, si, ji)
            ep = epochs.get(key)
            if ep is None:
                ep = epochs[key] = {"code": code, "type": typ, "row": row_no, "cells": {}}
            elif ep["code"] != code or ep["type"] != typ:
                raise ValidationError(f"row {row_no}: stim_code/stim_type change within one epoch",
                                      rule="schema", row=row_no)
            if (ch, t) in ep["cells"]:
                raise ValidationError(f"row {row_no}: duplicate (channel, t) = ({ch}, {t})",
                                      rule="dimension", row=row_no)
            ep["cells"][(ch, t)] = value
    if not epochs:
        raise ValidationError(f"{path}: no epochs", rule="dimension")

    E = max(ch for ep in epochs.values() for ch, _ in ep["cells"])
    T = max(t for ep in epochs.values() for _, t in ep["cells"])
    for key in sorted(epochs, key=lambda k: epochs[k]["row"]):
        ep = epochs[key]
        cells = ep["cells"]
        chans = {c for c, _ in cells}
        times = {t for _, t in cells}
        if len(cells) != E * T or chans != set(range(1, E + 1)) or times != set(range(1, T + 1)):
            raise ValidationError(
                f"row {ep['row']}: epoch {key} has {len(chans)} channels x {len(times)} time points, "
                f"dataset has {E} x {T}", rule="dimension", row=ep["row"])

    _validate_sequences(epochs)

    n_part = max(k[0] for k in epochs) + 1
    parts = []
    for n in range(n_part):
        keys = sorted(k for k in epochs if k[0] == n)
        X = np.empty((len(keys), E, T))
        for i, k in enumerate(keys):
            cells = epochs[k]["cells"]
            for (c, t), v in cells.items():
                X[i, c - 1, t - 1] = v
        arr = np.array(keys, dtype=int).reshape(-1, 4)
        parts.append(ParticipantData(
            X, [epochs[k]["type"] for k in keys], arr[:, 1], arr[:, 2], arr[:, 3],
            [epochs[k]["code"] for k in keys]))
    return Dataset(parts)


def _validate_sequences(epochs):
    groups = {}
    for k, ep in epochs.items():
        groups.setdefault(k[:3], []).append(ep)
    for g in sorted(groups):
        eps = sorted(groups[g], key=lambda e: e["row"])
        where = f"participant {g[0]}, char {g[1]}, seq {g[2]}"
        codes = [e["code"] for e in eps]
        bad = next((e for e in eps if not 1 <= e["code"] <= 12), None)
        if bad is not None:
            raise ValidationError(f"row {bad['row']}: {where}: stim_code {bad['code']} outside 1..12",
                                  rule="permutation", row=bad["row"])
        seen = set()
        for e in eps:
            if e["code"] in seen:
                raise ValidationError(f"row {e['row']}: {where}: stim_code {e['code']} repeated",
                                      rule="permutation", row=e["row"])
            seen.add(e["code"])
        targets = [e for e in eps if e["type"] == 1]
        if len(targets) > 2 or (len(eps) == rcp.N_CODES and len(targets) != 2):
            row = (targets[2] if len(targets) > 2 else eps[0])["row"]
            raise ValidationError(f"row {row}: {where}: {len(targets)} target stimuli in a sequence "
                                  f"of {len(codes)}", rule="two-target rule", row=row)
        if len(targets) == 2:
            tc = sorted(e["code"] for e in targets)
            if not (tc[0] <= 6 < tc[1]):
                row = targets[1]["row"]
                raise ValidationError(f"row {row}: {where}: targets must be one row and one column",
                                      rule="two-target rule", row=row)


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """Make numpy scalars/arrays JSON-friendly and map NaN to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not np.isfinite(v) else v
    return obj


def dump_json(obj, path=None, indent=None):
    text = json.dumps(_clean(obj), indent=indent, sort_keys=False)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def write_fit(path, model_config, mcmc_config, bsm_traces, ref_traces, extra=None):
    doc = {"schema_version": SCHEMA_VERSION, "kind": "fit",
           "model": model_config.to_dict(), "mcmc": mcmc_config.to_dict(),
           "bsm": [t.to_dict() for t in bsm_traces],
           "reference": [t.to_dict() for t in ref_traces]}
    if extra:
        doc.update(extra)
    dump_json(doc, path)


def read_fit(path):
    """Return (document, bsm traces, reference traces)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})", rule="schema") from None
    if doc.get("kind") != "fit" or doc.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: not a fit file with schema_version {SCHEMA_VERSION}",
                              rule="schema")
    bsm = [ChainTrace.from_dict(d) for d in doc.get("bsm", [])]
    ref = [ChainTrace.from_dict(d) for d in doc.get("reference", [])]
    return doc, bsm, ref


# ---------------------------------------------------------------------------
# result bundles
# ---------------------------------------------------------------------------

def summarize(x) -> dict:
    x = np.asarray(x, dtype=float)
    lo, hi = np.percentile(x, [2.5, 97.5])
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "lo": float(lo), "hi": float(hi)}


@dataclass
class ResultBundle:
    summaries: dict = field(default_factory=dict)
    match_probs: list = field(default_factory=list)
    psrf: dict = field(default_factory=dict)
    decisions: dict = field(default_factory=dict)
    accuracy: dict = field(default_factory=dict)   # method -> list over sequence counts
    erp: dict = field(default_factory=dict)        # kind -> (mean, lo, hi), each (E, T0)
    extra: dict = field(default_factory=dict)


def write_results(bundle: ResultBundle, out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        doc = {"schema_version": SCHEMA_VERSION,
               "summaries": bundle.summaries,
               "match_probs": [f"@@MP{i}@@" for i in range(len(bundle.match_probs))],
               "psrf": bundle.psrf,
               "decisions": bundle.decisions,
               "accuracy": bundle.accuracy}
        doc.update(bundle.extra)
        text = dump_json(doc, indent=1)
        # match probabilities are written as plain numbers with exactly 6 decimals
        for i, p in enumerate(bundle.match_probs):
            text = text.replace(f'"@@MP{i}@@"', f"{float(p):.6f}")
        (out / "results.json").write_text(text + "\n", encoding="utf-8")
        with (out / "curves.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "n_seqs", "accuracy"])
            for method, curve in bundle.accuracy.items():
                for s, a in enumerate(curve, start=1):
                    w.writerow([method, s, repr(float(a))])
        with (out / "erp_estimates.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "channel", "t", "mean", "lo", "hi"])
            for kind in ("target", "nontarget"):
                if kind not in bundle.erp:
                    continue
                mean, lo, hi = (np.asarray(a) for a in bundle.erp[kind])
                E, T = mean.shape
                for e in range(E):
                    for t in range(T):
                        w.writerow([kind, e + 1, t + 1, repr(float(mean[e, t])),
                                    repr(float(lo[e, t])), repr(float(hi[e, t]))])
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return out


def read_results(out_dir):
    """Parse a results directory back (results.json, curves.csv, erp_estimates.csv)."""
    out = Path(out_dir)
    doc = json.loads((out / "results.json").read_text(encoding="utf-8"))
    with (out / "curves.csv").open(newline="", encoding="utf-8") as fh:
        curves = list(csv.DictReader(fh))
    with (out / "erp_estimates.csv").open(newline="", encoding="utf-8") as fh:
        erp = list(csv.DictReader(fh))
    return doc, curves, erp
