"""Command-line front end.

Subcommands mirror the pipeline stages: ``synth`` (fixture data),
``connectivity`` (windowed model fits and coupling tensors), ``icec``
(channel rankings and scalp maps), ``select`` (take the top k),
``evaluate`` (CSP+SVM accuracy sweep), and ``report`` (merge sweep
outputs).  Every command is deterministic given its inputs and seed;
reruns produce byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 input-format error,
4 numerical failure.  Errors are emitted as one JSON object on stderr.
"""

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import evalpipe, icec, mvar, spectral, synthoracle, topomap
from .config import load_config
from .epochs import (BandSpec, EpochSet, bandpass_filter, ensemble_normalize,
                     load_epochs, save_epochs)
from .errors import ConfigError, EcselectError, FormatError
from .spectral import default_grid


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def _write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _slug(name):
    return re.sub(r"[^A-Za-z0-9._-]+", "-", name) or "unnamed"


def _csv_list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _csv_ints(text):
    try:
        return [int(item) for item in _csv_list(text)]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers: {text!r}") from exc


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _spec_from_doc(doc):
    proc = doc.get("process", {})
    seed = int(doc.get("seed", 0))
    fs = float(doc.get("fs", 250.0))
    if "coeffs" in proc:
        coeffs = np.asarray(proc["coeffs"], dtype=np.float64)
        sigma = proc.get("sigma")
        sigma = (np.eye(coeffs.shape[1]) if sigma is None
                 else np.asarray(sigma, dtype=np.float64))
        return synthoracle.GroundTruthSpec(coeffs=coeffs, sigma=sigma,
                                           seed=seed, fs=fs)
    if "random" in proc:
        r = proc["random"]
        return synthoracle.GroundTruthSpec.random_stable(
            K=int(r["K"]), order=int(r["order"]),
            spectral_radius=float(r.get("spectral_radius", 0.8)),
            seed=seed, fs=fs, scale=float(r.get("scale", 0.5)))
    raise ConfigError(
        "synth spec needs process.coeffs or process.random")


def cmd_synth(args):
    doc = _read_json(args.spec)
    kind = doc.get("kind", "var")
    if kind == "var":
        spec = _spec_from_doc(doc)
        epochs = synthoracle.gen_var_epochs(
            spec,
            n_trials=int(doc.get("n_trials", 1)),
            n_samples=int(doc.get("n_samples", 500)),
            burn_in=doc.get("burn_in"))
    elif kind == "labeled":
        epochs = synthoracle.gen_labeled_csp_dataset(
            K=int(doc["K"]),
            informative_channels=doc["informative_channels"],
            variance_ratio=float(doc.get("variance_ratio", 4.0)),
            n_trials_per_class=int(doc.get("n_trials_per_class", 50)),
            seed=int(doc.get("seed", 0)),
            n_samples=int(doc.get("n_samples", 400)),
            fs=float(doc.get("fs", 250.0)),
            n_classes=int(doc.get("n_classes", 2)),
            coupling=float(doc.get("coupling", 0.0)))
    else:
        raise ConfigError(f"unknown synth kind {kind!r}")
    # quantize to the container precision so a load returns these bytes
    epochs = EpochSet(
        data=epochs.data.astype(np.float32).astype(np.float64),
        fs=epochs.fs, channels=epochs.channels, labels=epochs.labels)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_epochs(epochs, args.out)
    print(args.out)
    return 0


# ---------------------------------------------------------------------------
# connectivity
# ---------------------------------------------------------------------------


def _connectivity_overrides(args):
    return {
        "metrics": _csv_list(args.metrics) if args.metrics else None,
        "order_candidates": _csv_ints(args.orders) if args.orders else None,
        "seed": args.seed,
        "output_dir": args.out_dir,
    }


def cmd_connectivity(args):
    cfg = load_config(args.config, _connectivity_overrides(args))
    if args.print_config:
        print(cfg.to_json())
        return 0
    epochs = load_epochs(args.input)
    band = BandSpec(cfg.filter_f_low, cfg.filter_f_high, "preproc")
    prepped = ensemble_normalize(
        bandpass_filter(epochs, band, cfg.filter_order))
    selection = mvar.select_order(prepped, cfg.order_candidates)
    model = mvar.fit_vieira_morf(prepped, selection.chosen)
    report = mvar.validate(model, prepped, seed=cfg.seed)
    windowed = mvar.fit_windowed(prepped, selection.chosen,
                                 cfg.window_length_s, cfg.step_s)
    grid = default_grid(cfg.grid_f_min, cfg.grid_f_max, cfg.grid_step)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    tensor_valid = {}
    for metric in cfg.metrics:
        tensor = spectral.compute_connectivity(windowed, metric, grid)
        path = out / f"connectivity_{metric}.ect"
        spectral.save_tensor(tensor, path)
        files[metric] = path.name
        tensor_valid[metric] = [bool(v) for v in tensor.valid_windows]

    window_stable, window_radius = [], []
    for m in windowed.models:
        if m is None:
            window_stable.append(None)
            window_radius.append(None)
        else:
            stable, radius = mvar.stability_check(m)
            window_stable.append(bool(stable))
            window_radius.append(float(radius))

    positions = topomap.standard_positions(epochs.channel_names)
    manifest = {
        "input": str(args.input),
        "fs": float(epochs.fs),
        "n_trials": int(epochs.n_trials),
        "n_samples": int(epochs.n_samples),
        "channels": [
            {"index": c.index, "name": c.name,
             "pos": list(positions[c.name]) if c.name in positions else None}
            for c in epochs.channels
        ],
        "filter": {"f_low": cfg.filter_f_low, "f_high": cfg.filter_f_high,
                   "order": cfg.filter_order},
        "grid": {"f_min": cfg.grid_f_min, "f_max": cfg.grid_f_max,
                 "step": cfg.grid_step},
        "order_selection": {
            "candidates": [int(r) for r in selection.candidate_orders],
            "aic_values": [None if np.isnan(v) else float(v)
                           for v in selection.aic_values],
            "chosen": int(selection.chosen),
        },
        "validation": {
            "stable": bool(report.stable),
            "max_eigen_modulus": float(report.max_eigen_modulus),
            "whiteness_pvalue": (None if np.isnan(report.whiteness_pvalue)
                                 else float(report.whiteness_pvalue)),
            "percent_consistency": float(report.percent_consistency),
        },
        "model": {
            "order": int(model.order),
            "coeffs": model.coeffs.tolist(),
            "noise_cov": model.noise_cov.tolist(),
            "n_obs": int(model.n_obs),
        },
        "windows": {
            "length_s": cfg.window_length_s,
            "step_s": cfg.step_s,
            "length_samples": int(windowed.window_length_samples),
            "step_samples": int(windowed.step_samples),
            "starts": [int(s) for s in windowed.window_start_samples],
            "stable": window_stable,
            "max_moduli": window_radius,
            "fit_errors": {str(k): v for k, v in sorted(windowed.errors.items())},
        },
        "metrics": list(cfg.metrics),
        "tensor_files": files,
        "tensor_valid_windows": tensor_valid,
        "seed": int(cfg.seed),
    }
    _write_text(out / "manifest.json",
                json.dumps(manifest, sort_keys=True, indent=2))
    print(str(out / "manifest.json"))
    return 0


# ---------------------------------------------------------------------------
# icec
# ---------------------------------------------------------------------------


def _gather_tensors(args):
    paths = []
    if args.tensors:
        paths.extend(args.tensors)
    if args.tensor_dir:
        paths.extend(sorted(str(p) for p in Path(args.tensor_dir).glob("*.ect")))
    if not paths:
        raise ConfigError("no tensor files given (use --tensors or --tensor-dir)")
    return paths


def _channel_info(args, n_channels):
    names = None
    positions = {}
    if args.manifest:
        doc = _read_json(args.manifest)
        chans = sorted(doc.get("channels", []), key=lambda c: c["index"])
        if chans:
            names = [c["name"] for c in chans]
            positions = {c["name"]: tuple(c["pos"]) for c in chans
                         if c.get("pos") is not None}
    if names is None:
        names = [f"ch{i:02d}" for i in range(n_channels)]
    if args.positions:
        doc = _read_json(args.positions)
        positions.update({str(k): (float(v[0]), float(v[1]))
                          for k, v in doc.items()})
    if not positions:
        positions = topomap.standard_positions(names)
    return names, positions


def cmd_icec(args):
    overrides = {
        "bands": _csv_list(args.bands) if args.bands else None,
        "top_fraction": args.top_fraction,
        "direction": args.direction,
        "output_dir": args.out_dir,
    }
    cfg = load_config(args.config, overrides)
    if args.print_config:
        print(cfg.to_json())
        return 0
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in _gather_tensors(args):
        tensor = spectral.load_tensor(path)
        K = tensor.values.shape[0]
        names, positions = _channel_info(args, K)
        if len(names) != K:
            raise ConfigError(
                f"{len(names)} channel names for a {K}-channel tensor")
        have_positions = all(n in positions for n in names)
        if not have_positions:
            print(f"warning: missing channel positions; writing JSON "
                  f"reports only for {path}", file=sys.stderr)
        for band in cfg.band_specs():
            bw = icec.band_window(tensor, band)
            rep = icec.icec(icec.collapse(tensor, bw),
                            top_fraction=cfg.top_fraction,
                            direction=cfg.direction)
            stem = f"icec_{_slug(tensor.metric)}_{_slug(band.name)}"
            _write_text(out / f"{stem}.json",
                        icec.report_to_json(rep, names))
            written.append(str(out / f"{stem}.json"))
            if have_positions:
                _write_text(out / f"{stem}.svg",
                            topomap.render_topomap(rep, positions, names))
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# select / evaluate / report
# ---------------------------------------------------------------------------


def cmd_select(args):
    doc = _read_json(args.report)
    rep = icec.report_from_json(json.dumps(doc))
    result = icec.select_channels(rep, args.k)
    names = {c["index"]: c["name"] for c in doc.get("channels", [])}
    out_doc = {
        "metric": rep.metric,
        "band": rep.band.name if rep.band is not None else None,
        "k": result.k,
        "selected": [
            {"index": i, "name": names.get(i, f"ch{i:02d}")}
            for i in result.selected
        ],
    }
    text = json.dumps(out_doc, sort_keys=True, indent=2)
    if args.out:
        _write_text(args.out, text)
        print(args.out)
    else:
        print(text)
    return 0


def _gather_reports(args):
    paths = []
    if args.reports:
        paths.extend(args.reports)
    if args.report_dir:
        paths.extend(sorted(str(p) for p in Path(args.report_dir).glob("icec_*.json")))
    if not paths:
        raise ConfigError("no ranking reports given (use --reports or --report-dir)")
    return paths


def cmd_evaluate(args):
    overrides = {
        "ks": _csv_ints(args.ks) if args.ks else None,
        "csp_pairs": args.csp_pairs,
        "svm_c": args.svm_c,
        "svm_gamma": args.svm_gamma,
        "output_dir": args.out_dir,
    }
    cfg = load_config(args.config, overrides)
    if args.print_config:
        print(cfg.to_json())
        return 0
    train = load_epochs(args.train)
    test = load_epochs(args.test)
    if train.labels is None or test.labels is None:
        raise ConfigError(
            "evaluate requires labeled train and test epoch files")
    reports = [icec.report_from_json(Path(p).read_text())
               for p in _gather_reports(args)]
    ks = cfg.resolve_ks(train.n_channels)
    dataset_id = args.dataset_id or Path(args.train).stem
    result = evalpipe.evaluate_selection(
        train, test, reports, ks, n_pairs=cfg.csp_pairs,
        c_penalty=cfg.svm_c, gamma=cfg.svm_gamma, dataset_id=dataset_id)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "evaluation.json", evalpipe.evaluation_to_json(result))
    _write_text(out / "evaluation.csv", evalpipe.evaluation_to_csv(result))
    print(str(out / "evaluation.json"))
    print(str(out / "evaluation.csv"))
    return 0


def cmd_report(args):
    reports = [evalpipe.evaluation_from_json(Path(p).read_text())
               for p in args.evaluations]
    lines = []
    header = None
    for rep in reports:
        text = evalpipe.evaluation_to_csv(rep)
        rows = text.splitlines()
        if header is None:
            header = rows[0]
            lines.append(header)
        lines.extend(rows[1:])
    merged = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, merged)
        print(args.out)
    else:
        print(merged, end="")
    for rep in reports:
        scored = [c for c in rep.cells if not np.isnan(c.test_acc)]
        if scored:
            best = max(scored, key=lambda c: c.test_acc)
            print(f"# best {rep.dataset_id or '?'}: {best.metric}/{best.band} "
                  f"k={best.k} test_acc={best.test_acc:.4f}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ecselect",
        description="Channel ranking and selection from directed coupling "
                    "strength, with a CSP+SVM evaluation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded fixture dataset")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--out", required=True, help="output EEGB path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("connectivity",
                       help="fit windowed models and write coupling tensors")
    p.add_argument("--input", required=True, help="EEGB epoch file")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--metrics", help="comma-separated metric names")
    p.add_argument("--orders", help="comma-separated candidate orders")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_connectivity)

    p = sub.add_parser("icec", help="rank channels from coupling tensors")
    p.add_argument("--tensors", nargs="*", help="ECT1 tensor files")
    p.add_argument("--tensor-dir", help="directory of *.ect files")
    p.add_argument("--manifest", help="manifest.json with channel metadata")
    p.add_argument("--positions", help="JSON of {name: [x, y]} positions")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--bands", help="comma-separated band preset names")
    p.add_argument("--top-fraction", type=float, dest="top_fraction")
    p.add_argument("--direction", choices=["to", "from", "both"])
    p.add_argument("--out-dir")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_icec)

    p = sub.add_parser("select", help="take the top-k channels of a report")
    p.add_argument("--report", required=True, help="ranking report JSON")
    p.add_argument("--k", required=True, type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate",
                       help="accuracy sweep over rankings and selection sizes")
    p.add_argument("--train", required=True, help="labeled EEGB file")
    p.add_argument("--test", required=True, help="labeled EEGB file")
    p.add_argument("--reports", nargs="*", help="ranking report JSONs")
    p.add_argument("--report-dir", help="directory of icec_*.json reports")
    p.add_argument("--ks", help="comma-separated selection sizes")
    p.add_argument("--csp-pairs", type=int, dest="csp_pairs")
    p.add_argument("--svm-c", type=float, dest="svm_c")
    p.add_argument("--svm-gamma", type=float, dest="svm_gamma")
    p.add_argument("--dataset-id")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out-dir")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluation outputs into one CSV")
    p.add_argument("--evaluations", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EcselectError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
