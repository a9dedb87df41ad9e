"""Command-line interface: reproducible batch runs over manifests and models.

Every subcommand writes a machine-readable ``<command>_result.json`` plus a
human-readable ``run.log`` into the output directory.  Artifacts are a
deterministic function of the inputs and flags; in particular the thread
count never appears in them, so reruns with different ``--threads`` are
byte-identical.  Exit codes: 0 success, 1 data/model errors (the error
name goes to stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

from . import __version__
from .errors import MarkovSeqError, MissingCovariate
from .estimation import FitControl, fit_model
from .inference import (
    information_criteria,
    log_likelihood,
    mixture_summary,
    posterior_state_probs,
    viterbi_paths,
)
from .model import (
    MixtureModel,
    combine_clusters,
    model_from_json,
    model_to_json,
    trim_model,
)
from .seqdata import (
    CovariateDesign,
    SequenceDataset,
    effective_size,
    ingest_dataset,
    mc_to_sc,
)
from .simulate import simulate_hmm_data, simulate_mhmm_data
from .svgplot import render_state_distribution_svg


def _default_threads() -> int:
    return int(os.environ.get("MARKOVSEQ_THREADS", "1"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="markovseq",
        description="Estimate, decode, and summarize (mixture) hidden Markov "
        "models on multichannel categorical sequences.",
    )
    parser.add_argument("--version", action="version", version=f"markovseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False, model=False):
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest JSON")
        if model:
            p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument(
            "--mode",
            choices=["scaled", "logspace"],
            default="scaled",
            help="numerical mode for likelihood recursions",
        )
        p.add_argument(
            "--threads",
            type=int,
            default=_default_threads(),
            help="worker threads (default from MARKOVSEQ_THREADS); never changes results",
        )
        p.add_argument(
            "--format",
            choices=["text", "json", "csv"],
            default="text",
            help="stdout format",
        )
        return p

    common(sub.add_parser("validate", help="check a manifest and report dataset shape"), manifest=True)

    fit = common(sub.add_parser("fit", help="estimate model parameters"), manifest=True, model=True)
    fit.add_argument("--em-max-iter", type=int, default=1000)
    fit.add_argument("--em-rel-tol", type=float, default=1e-8)
    fit.add_argument("--restarts", type=int, default=0)
    fit.add_argument("--restart-perturb", type=float, default=0.5)
    fit.add_argument("--local-step", action="store_true")
    fit.add_argument("--local-max-iter", type=int, default=200)
    fit.add_argument("--local-grad-tol", type=float, default=1e-6)
    fit.add_argument("--seed", type=int, default=0)

    common(sub.add_parser("loglik", help="log-likelihood of a model on data"), manifest=True, model=True)
    common(sub.add_parser("bic", help="information criteria of a model on data"), manifest=True, model=True)
    common(sub.add_parser("viterbi", help="most probable hidden paths"), manifest=True, model=True)
    common(sub.add_parser("posterior", help="posterior state probabilities"), manifest=True, model=True)
    common(sub.add_parser("summary", help="mixture model summary report"), manifest=True, model=True)

    sim = common(sub.add_parser("simulate", help="draw data from a model"), model=True)
    sim.add_argument("--n-subjects", type=int, required=True)
    sim.add_argument("--n-time", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--missing-rate", type=float, default=0.0)

    conv = common(sub.add_parser("convert", help="collapse channels to one"), manifest=True)
    conv.add_argument("--separator", default="/")

    trim = common(sub.add_parser("trim", help="zero out small probabilities"), model=True)
    trim.add_argument("--trim-tol", type=float, required=True)
    trim.add_argument("--manifest", help="optional data for the log-likelihood effect")

    common(sub.add_parser("plot", help="state-distribution SVG"), manifest=True)
    return parser


# ----------------------------------------------------------------------
# artifact helpers
# ----------------------------------------------------------------------


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_log(out: Path, lines) -> None:
    with open(out / "run.log", "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def _load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))


def _inference_mode(args) -> str:
    return "log" if args.mode == "logspace" else "scaled"


def _resolve_design(model, cov, n_subjects):
    """Match a loaded covariate table to the columns the model expects."""
    if not isinstance(model, MixtureModel):
        return None
    if model.design_names == ("(Intercept)",):
        return CovariateDesign.intercept(n_subjects)
    if cov is None:
        raise MissingCovariate(
            f"model expects covariates {model.design_names[1:]}, manifest has none"
        )
    cols = [0]
    for name in model.design_names[1:]:
        if name not in cov.names:
            raise MissingCovariate(f"covariate {name!r} not found in manifest data")
        cols.append(cov.names.index(name))
    return CovariateDesign(model.design_names, cov.X[:, cols])


def _write_dataset_files(data: SequenceDataset, out: Path, stem: str):
    """Dataset JSON + per-channel wide CSVs + a manifest that re-ingests them."""
    _write_json(out / f"{stem}.json", data.to_json())
    channel_entries = []
    for ch in data.channels:
        fname = f"{stem}_{_safe_name(ch.name)}.csv"
        with open(out / fname, "w", encoding="utf-8") as fh:
            fh.write("id," + ",".join(f"t{t + 1}" for t in range(data.n_time)) + "\n")
            for sid, row in zip(data.subject_ids, ch.codes):
                toks = [ch.alphabet.token(int(c)) for c in row]
                fh.write(sid + "," + ",".join(toks) + "\n")
        channel_entries.append(
            {
                "name": ch.name,
                "csv": fname,
                "alphabet": list(ch.alphabet.labels),
                "missing_token": ch.alphabet.missing_token,
            }
        )
    _write_json(out / f"{stem}_manifest.json", {"id_column": "id", "channels": channel_entries})


def _emit(args, text_lines, json_obj):
    if args.format == "json":
        print(json.dumps(json_obj, indent=2))
    else:
        for line in text_lines:
            print(line)


# ----------------------------------------------------------------------
# subcommand handlers
# ----------------------------------------------------------------------


def _cmd_validate(args, out: Path, log) -> int:
    data, cov = ingest_dataset(args.manifest)
    result = {
        "n_subjects": data.n_subjects,
        "n_time": data.n_time,
        "n_channels": data.n_channels,
        "effective_size": effective_size(data),
        "channels": [
            {
                "name": ch.name,
                "alphabet_size": ch.alphabet.size,
                "missing_cells": int((~ch.observed).sum()),
            }
            for ch in data.channels
        ],
        "covariates": list(cov.names) if cov is not None else None,
    }
    _write_json(out / "validate_result.json", result)
    log.append(f"manifest ok: {data.n_subjects} subjects x {data.n_time} time points "
               f"x {data.n_channels} channels")
    _emit(args, [log[-1]], result)
    return 0


def _cmd_fit(args, out: Path, log) -> int:
    data, cov = ingest_dataset(args.manifest)
    model = _load_model(args.model)
    design = _resolve_design(model, cov, data.n_subjects)
    control = FitControl(
        em_max_iter=args.em_max_iter,
        em_rel_tol=args.em_rel_tol,
        restarts=args.restarts,
        restart_perturb=args.restart_perturb,
        local_step=args.local_step,
        local_max_iter=args.local_max_iter,
        local_grad_tol=args.local_grad_tol,
        seed=args.seed,
        threads=args.threads,
    )
    res = fit_model(model, data, design, control)
    ic = information_criteria(res.model, data, design, _inference_mode(args))
    _write_json(out / "model_fitted.json", model_to_json(res.model))
    result = {
        "loglik": res.loglik,
        "restart_logliks": res.restart_logliks,
        "em_iterations": res.em_iterations,
        "local_iterations": res.local_iterations,
        "converged_by": res.converged_by,
        "diagnostics": res.diagnostics,
        "p": ic.p,
        "nobs": ic.nobs,
        "bic": ic.bic,
        "control": control.to_dict(),
    }
    _write_json(out / "fit_result.json", result)
    log.append(f"fit: loglik {res.loglik!r} after {res.em_iterations} EM iterations "
               f"({res.converged_by})")
    log.extend(res.diagnostics)
    _emit(args, [f"loglik {res.loglik}", f"bic {ic.bic}"], result)
    return 0


def _cmd_loglik(args, out: Path, log) -> int:
    data, cov = ingest_dataset(args.manifest)
    model = _load_model(args.model)
    design = _resolve_design(model, cov, data.n_subjects)
    ll = log_likelihood(model, data, design, _inference_mode(args), args.threads)
    _write_json(out / "loglik_result.json", {"loglik": ll})
    log.append(f"loglik {ll!r}")
    _emit(args, [str(ll)], {"loglik": ll})
    return 0


def _cmd_bic(args, out: Path, log) -> int:
    data, cov = ingest_dataset(args.manifest)
    model = _load_model(args.model)
    design = _resolve_design(model, cov, data.n_subjects)
    ic = information_criteria(model, data, design, _inference_mode(args))
    result = {"loglik": ic.loglik, "p": ic.p, "nobs": ic.nobs, "bic": ic.bic}
    _write_json(out / "bic_result.json", result)
    log.append(f"bic {ic.bic!r} (p={ic.p}, nobs={ic.nobs!r})")
    _emit(args, [f"loglik {ic.loglik}", f"p {ic.p}", f"nobs {ic.nobs}", f"bic {ic.bic}"], result)
    return 0


def _state_names_for(model, design):
    if isinstance(model, MixtureModel):
        return combine_clusters(model, design)[0].state_names
    return model.state_names


def _cmd_viterbi(args, out: Path, log) -> int:
    data, cov = ingest_dataset(args.manifest)
    model = _load_model(args.model)
    design = _resolve_design(model, cov, data.n_subjects)
    res = viterbi_paths(model, data, design=design)
    names = _state_names_for(model, design)
    lines = []
    header = "subject_id,t,state"
    if res.clusters is not None:
        header += ",cluster"
    lines.append(header)
    for i, sid in enumerate(data.subject_ids):
        for t in range(data.n_time):
            row = f"{sid},{t + 1},{names[res.paths[i, t]]}"
            if res.clusters is not None:
                row += f",{model.cluster_names[res.clusters[i]]}"
            lines.append(row)
    (out / "paths.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(
        out / "viterbi_result.json",
        {
            "log_joint": {sid: float(v) for sid, v in zip(data.subject_ids, res.log_joint)},
            "paths_csv": "paths.csv",
        },
    )
    log.append(f"viterbi: wrote paths for {data.n_subjects} subjects")
    if args.format == "csv":
        for line in lines:
            print(line)
    else:
        _emit(args, [log[-1]], {"paths_csv": "paths.csv"})
    return 0


def _cmd_posterior(args, out: Path, log) -> int:
    data, cov = ingest_dataset(args.manifest)
    model = _load_model(args.model)
    design = _resolve_design(model, cov, data.n_subjects)
    post = posterior_state_probs(model, data, design, _inference_mode(args), args.threads)
    names = _state_names_for(model, design)
    lines = ["subject_id,t," + ",".join(names)]
    for i, sid in enumerate(data.subject_ids):
        for t in range(data.n_time):
            vals = ",".join(format(v, ".17g") for v in post[i, t])
            lines.append(f"{sid},{t + 1},{vals}")
    (out / "posterior.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_json(out / "posterior_result.json", {"posterior_csv": "posterior.csv"})
    log.append(f"posterior: wrote {data.n_subjects * data.n_time} rows")
    if args.format == "csv":
        for line in lines:
            print(line)
    else:
        _emit(args, [log[-1]], {"posterior_csv": "posterior.csv"})
    return 0


def _cmd_summary(args, out: Path, log) -> int:
    data, cov = ingest_dataset(args.manifest)
    model = _load_model(args.model)
    if not isinstance(model, MixtureModel):
        print("usage error: summary requires a mixture model", file=sys.stderr)
        return 2
    design = _resolve_design(model, cov, data.n_subjects)
    report = mixture_summary(model, data, design, _inference_mode(args))
    text = report.to_text()
    (out / "summary.txt").write_text(text, encoding="utf-8")
    _write_json(out / "summary_result.json", report.to_dict())
    log.append(f"summary: loglik {report.loglik!r}, bic {report.bic!r}")
    _emit(args, text.splitlines(), report.to_dict())
    return 0


def _cmd_simulate(args, out: Path, log) -> int:
    model = _load_model(args.model)
    if isinstance(model, MixtureModel):
        data, paths, labels = simulate_mhmm_data(
            model, None, args.n_subjects, args.n_time, args.seed, args.missing_rate
        )
        names = combine_clusters(model, CovariateDesign.intercept(args.n_subjects))[0].state_names
        clines = ["subject_id,cluster"]
        clines += [
            f"{sid},{model.cluster_names[labels[i]]}"
            for i, sid in enumerate(data.subject_ids)
        ]
        (out / "clusters.csv").write_text("\n".join(clines) + "\n", encoding="utf-8")
    else:
        data, paths = simulate_hmm_data(
            model, args.n_subjects, args.n_time, args.seed, args.missing_rate
        )
        names = model.state_names
    _write_dataset_files(data, out, "dataset")
    plines = ["subject_id,t,state"]
    for i, sid in enumerate(data.subject_ids):
        for t in range(args.n_time):
            plines.append(f"{sid},{t + 1},{names[paths[i, t]]}")
    (out / "paths.csv").write_text("\n".join(plines) + "\n", encoding="utf-8")
    _write_json(
        out / "simulate_result.json",
        {
            "n_subjects": args.n_subjects,
            "n_time": args.n_time,
            "seed": args.seed,
            "missing_rate": args.missing_rate,
            "dataset_json": "dataset.json",
            "manifest": "dataset_manifest.json",
        },
    )
    log.append(f"simulate: {args.n_subjects} subjects x {args.n_time} time points")
    _emit(args, [log[-1]], {"dataset_json": "dataset.json"})
    return 0


def _cmd_convert(args, out: Path, log) -> int:
    data, _ = ingest_dataset(args.manifest)
    combined = mc_to_sc(data, args.separator)
    _write_dataset_files(combined, out, "converted")
    result = {
        "n_channels_in": data.n_channels,
        "alphabet_size": combined.channels[0].alphabet.size,
        "dataset_json": "converted.json",
    }
    _write_json(out / "convert_result.json", result)
    log.append(
        f"convert: {data.n_channels} channels -> alphabet of "
        f"{combined.channels[0].alphabet.size}"
    )
    _emit(args, [log[-1]], result)
    return 0


def _cmd_trim(args, out: Path, log) -> int:
    model = _load_model(args.model)
    trimmed = trim_model(model, args.trim_tol)
    _write_json(out / "model_trimmed.json", model_to_json(trimmed))
    result = {"trim_tol": args.trim_tol, "model": "model_trimmed.json"}
    if args.manifest:
        data, cov = ingest_dataset(args.manifest)
        design = _resolve_design(model, cov, data.n_subjects)
        mode = _inference_mode(args)
        result["loglik_before"] = log_likelihood(model, data, design, mode)
        result["loglik_after"] = log_likelihood(trimmed, data, design, mode)
        log.append(
            f"trim: loglik {result['loglik_before']!r} -> {result['loglik_after']!r}"
        )
    else:
        log.append(f"trim: tol {args.trim_tol!r}")
    _write_json(out / "trim_result.json", result)
    _emit(args, [log[-1]], result)
    return 0


def _cmd_plot(args, out: Path, log) -> int:
    data, _ = ingest_dataset(args.manifest)
    svg = render_state_distribution_svg(data)
    (out / "plot.svg").write_text(svg, encoding="utf-8")
    _write_json(out / "plot_result.json", {"svg": "plot.svg"})
    log.append(f"plot: {data.n_channels} panels")
    _emit(args, [log[-1]], {"svg": "plot.svg"})
    return 0


_HANDLERS = {
    "validate": _cmd_validate,
    "fit": _cmd_fit,
    "loglik": _cmd_loglik,
    "bic": _cmd_bic,
    "viterbi": _cmd_viterbi,
    "posterior": _cmd_posterior,
    "summary": _cmd_summary,
    "simulate": _cmd_simulate,
    "convert": _cmd_convert,
    "trim": _cmd_trim,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log: list[str] = [f"markovseq {args.command}"]
    try:
        code = _HANDLERS[args.command](args, out, log)
    except MarkovSeqError as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        log.append(f"error: {type(err).__name__}: {err}")
        _write_log(out, log)
        return 1
    except (OSError, ValueError, KeyError) as err:
        # unreadable files, malformed JSON, or missing document fields
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 1
    _write_log(out, log)
    return code


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
