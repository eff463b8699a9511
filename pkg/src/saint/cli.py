"""Command-line entry point: ``saint <verb> [flags]``.

Each verb writes its outputs plus a JSON manifest of the effective flags,
seeds and model digests. Flag precedence is built-in default < ``--config``
JSON < command line. Exit status: 0 success, 1 usage error, 2 data or model
error. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, ami, rfn
from .fileio import ContainerError, export_csv, export_pgm, load_svol, save_svol, svol_header
from .params import ParamSet, load_params, save_params
from .pipeline import (
    ExperimentConfig,
    MetricsReport,
    average_volume,
    baseline_interp,
    evaluate,
    evaluate_methods,
    make_dataset,
    saint_infer,
    train_saint,
    view_volumes,
)
from .tiling import ami_feature_net, margin, run_stitch_analysis
from .volume import VIEWS, extract_view, phantom

log = logging.getLogger("saint")

VERBS = ("gen-phantom", "train", "infer", "eval", "fdm", "stitch", "export-slice")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _words(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.split(",") if t)


# built-in defaults per verb; None marks a required value
DEFAULTS = {
    "gen-phantom": {"dims": (48, 48, 48), "spacing": (1.0, 1.0, 1.0), "recipe": "laminae",
                    "period": None, "dtype": "float64"},
    "train": {},
    "infer": {"input": None, "rz": None, "ami": None, "rfn": None, "method": "saint",
              "dtype": None},
    "eval": {"pred": None, "gt": None, "rz": None, "ami": None, "rfn": None,
             "method": "pred", "region": "crop32"},
    "fdm": {"k": 3, "rz": None, "spacing": (1.0, 1.0)},
    "stitch": {"input": None, "index": None, "size": 96, "core": 32, "ami": None,
               "margins": None},
    "export-slice": {"input": None, "view": "axial", "index": None},
}
REQUIRED = {
    "infer": ("input", "rz"),
    "eval": ("rz",),
    "fdm": ("rz",),
    "export-slice": ("input",),
}
_TRAIN_FIELDS = {f.name for f in fields(ExperimentConfig)} - {"out_dir"}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--config", help="JSON file of flag values; explicit flags win")
    common.add_argument("--out", help="output file or directory (default under $SAINT_OUT_DIR)")
    common.add_argument("--threads", type=int, help="worker threads for inference (default 1)")

    parser = _Parser(prog="saint", description="Spacing-aware slice interpolation.")
    parser.add_argument("--version", action="version", version=f"saint {__version__}")
    sub = parser.add_subparsers(dest="verb", metavar="verb", parser_class=_Parser)

    def verb(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], argument_default=argparse.SUPPRESS)

    p = verb("gen-phantom", "write a synthetic phantom as .svol")
    p.add_argument("--dims", type=_ints)
    p.add_argument("--spacing", type=_floats, help="R_x,R_y,R_z in mm")
    p.add_argument("--recipe", choices=("ellipsoids", "laminae", "ramp", "laminae+ellipsoids"))
    p.add_argument("--period", type=float, help="laminae period in mm")
    p.add_argument("--dtype", choices=("float64", "float32"))

    p = verb("train", "two-stage training on synthetic phantoms")
    p.add_argument("--dims", type=_ints)
    p.add_argument("--recipes", type=_words)
    p.add_argument("--train-count", dest="train_count", type=int)
    p.add_argument("--test-count", dest="test_count", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--train-rz", dest="train_rz", type=_ints)
    p.add_argument("--eval-rz", dest="eval_rz", type=_ints)
    p.add_argument("--ami-preset", dest="ami_preset", choices=tuple(ami.PRESETS))
    p.add_argument("--rfn-preset", dest="rfn_preset", choices=tuple(rfn.PRESETS))
    p.add_argument("--ami-steps", dest="ami_steps", type=int)
    p.add_argument("--rfn-steps", dest="rfn_steps", type=int)
    p.add_argument("--lr", type=float)

    p = verb("infer", "interpolate a sparse .svol along z")
    p.add_argument("--in", dest="input")
    p.add_argument("--rz", type=int)
    p.add_argument("--ami", help="AMI model stem")
    p.add_argument("--rfn", help="RFN model stem")
    p.add_argument("--method", choices=("saint", "ami_avg", "trilinear", "nearest"))
    p.add_argument("--dtype", choices=("float64", "float32"), help="default: input dtype")

    p = verb("eval", "PSNR/SSIM of a prediction, or of trained models on held-out phantoms")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--rz", type=_ints)
    p.add_argument("--ami")
    p.add_argument("--rfn")
    p.add_argument("--method", help="method label for --pred rows")
    p.add_argument("--region")

    p = verb("fdm", "dump filter distance matrices as CSV")
    p.add_argument("--k", type=int)
    p.add_argument("--rz", type=int)
    p.add_argument("--spacing", type=_floats, help="R_H,R_W of the SR grid in mm")

    p = verb("stitch", "tiled versus monolithic inference through the AMI feature chain")
    p.add_argument("--in", dest="input", help=".svol whose axial slice is used")
    p.add_argument("--index", type=int)
    p.add_argument("--size", type=int, help="phantom image size when --in is absent")
    p.add_argument("--core", type=int)
    p.add_argument("--ami")
    p.add_argument("--margins", type=_ints, help="tile margins (default: 0 and the full margin)")

    p = verb("export-slice", "write one slice as 16-bit PGM")
    p.add_argument("--in", dest="input")
    p.add_argument("--view", choices=VIEWS)
    p.add_argument("--index", type=int)
    return parser


# ----------------------------------------------------------------------------
# helpers


def _effective(verb: str, given: dict) -> dict:
    cfg = {}
    if "config" in given:
        try:
            cfg = json.loads(Path(given["config"]).read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read config {given['config']}: {exc}") from None
        if not isinstance(cfg, dict):
            raise DataError(f"config {given['config']} must hold a JSON object")
    base = {"seed": 0, "threads": 1, "out": None}
    if verb == "train":
        base.update({k: v for k, v in ExperimentConfig().to_dict().items() if k in _TRAIN_FIELDS})
    else:
        base.update(DEFAULTS[verb])
    unknown = set(cfg) - set(base)
    if unknown:
        raise UsageError(f"config keys not valid for {verb}: {sorted(unknown)}")
    eff = {**base, **cfg, **{k: v for k, v in given.items() if k != "config"}}
    missing = [k for k in REQUIRED.get(verb, ()) if eff.get(k) is None]
    if missing:
        raise UsageError(f"{verb}: missing required flags: {', '.join('--' + m for m in missing)}")
    if eff["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return eff


def _out_path(eff: dict, default: str) -> Path:
    if eff.get("out"):
        return Path(eff["out"])
    return Path(os.environ.get("SAINT_OUT_DIR", ".")) / default


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def _write_manifest(path: Path, verb: str, eff: dict, models: dict, outputs: list) -> Path:
    doc = {
        "tool": "saint",
        "version": __version__,
        "verb": verb,
        "flags": {k: _jsonable(v) for k, v in sorted(eff.items())},
        "seed": eff.get("seed"),
        "models": models,
        "outputs": [str(p) for p in outputs],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _beside(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def _model_entry(ps: ParamSet, path) -> dict:
    return {"path": None if path is None else str(path), "kind": ps.kind, "sha256": ps.digest(),
            "seed": ps.seed}


def _load_model(path, kind) -> ParamSet:
    try:
        return load_params(path, kind)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load {kind} model {path}: {exc}") from None


# ----------------------------------------------------------------------------
# verbs


def cmd_gen_phantom(eff):
    dims, spacing = tuple(eff["dims"]), tuple(eff["spacing"])
    if len(dims) != 3 or len(spacing) != 3:
        raise UsageError("--dims and --spacing take three values")
    opts = {"period": eff["period"]} if eff["period"] is not None else {}
    v = phantom(dims, spacing, eff["seed"], eff["recipe"], **opts)
    out = save_svol(v, _out_path(eff, "phantom.svol"), eff["dtype"])
    return _beside(out), {}, [out]


def cmd_train(eff):
    out = _out_path(eff, "run")
    cfg = ExperimentConfig(**{k: eff[k] for k in _TRAIN_FIELDS}, out_dir=str(out))
    out.mkdir(parents=True, exist_ok=True)
    ami_ps, rfn_ps, _ = train_saint(cfg)
    a_json, a_bin = save_params(ami_ps, out / "model.ami")
    r_json, r_bin = save_params(rfn_ps, out / "model.rfn")
    (out / "experiment.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    models = {"ami": _model_entry(ami_ps, out / "model.ami"), "rfn": _model_entry(rfn_ps, out / "model.rfn")}
    outputs = [a_json, a_bin, r_json, r_bin, out / "train_log.csv", out / "experiment.json"]
    return out / "manifest.json", models, outputs


def cmd_infer(eff):
    sparse = load_svol(eff["input"])
    dtype = eff["dtype"] or svol_header(eff["input"])["dtype"]
    r_z, method = eff["rz"], eff["method"]
    if r_z < 1:
        raise UsageError("--rz must be >= 1")
    models = {}
    if method in ("saint", "ami_avg"):
        if not eff["ami"] or (method == "saint" and not eff["rfn"]):
            raise UsageError(f"--method {method} needs --ami" + (" and --rfn" if method == "saint" else ""))
        ami_ps = _load_model(eff["ami"], ami.KIND)
        models["ami"] = _model_entry(ami_ps, eff["ami"])
        if method == "saint":
            rfn_ps = _load_model(eff["rfn"], rfn.KIND)
            models["rfn"] = _model_entry(rfn_ps, eff["rfn"])
            pred = saint_infer(sparse, r_z, ami_ps, rfn_ps, threads=eff["threads"])
        elif r_z == 1:
            pred = sparse.with_data(sparse.data.copy())
        else:
            i_sag, i_cor = view_volumes(sparse, r_z, ami_ps, eff["threads"])
            pred = average_volume(i_sag, i_cor, sparse, r_z)
    else:
        pred = baseline_interp(sparse, r_z, method)
    out = save_svol(pred, _out_path(eff, "interpolated.svol"), dtype)
    return _beside(out), models, [out]


def cmd_eval(eff):
    out = _out_path(eff, "metrics.csv")
    rzs = tuple(eff["rz"])
    models = {}
    if eff["pred"] is not None:
        if eff["gt"] is None or len(rzs) != 1:
            raise UsageError("--pred needs --gt and a single --rz")
        pred, gt = load_svol(eff["pred"]), load_svol(eff["gt"])
        report = evaluate(pred, gt, rzs[0], eff["method"], Path(eff["pred"]).stem, eff["region"])
    else:
        if not eff["ami"] or not eff["rfn"]:
            raise UsageError("eval needs either --pred/--gt or --ami/--rfn")
        ami_ps = _load_model(eff["ami"], ami.KIND)
        rfn_ps = _load_model(eff["rfn"], rfn.KIND)
        models = {"ami": _model_entry(ami_ps, eff["ami"]), "rfn": _model_entry(rfn_ps, eff["rfn"])}
        cfg = _experiment_for_eval(eff)
        _, test = make_dataset(cfg)
        report = MetricsReport()
        for r_z in rzs:
            report.extend(evaluate_methods(cfg, test, r_z, ami_ps, rfn_ps))
    report.to_csv(out)
    return _beside(out), models, [out]


def _experiment_for_eval(eff) -> ExperimentConfig:
    """Held-out set definition: the training run's experiment.json when it
    sits beside the AMI model, else the built-in defaults."""
    exp = Path(eff["ami"]).parent / "experiment.json"
    d = json.loads(exp.read_text()) if exp.exists() else {}
    d.update(region=eff["region"], out_dir=None)
    return ExperimentConfig.from_dict(d)


def cmd_fdm(eff):
    k, r_z, spacing = eff["k"], eff["rz"], tuple(eff["spacing"])
    if len(spacing) != 2:
        raise UsageError("--spacing takes R_H,R_W")
    rows = []
    for c in range(1, r_z):
        p = ami.fdm(c, k, spacing[0], spacing[1], r_z)
        for h in range(k):
            for w in range(k):
                rows.append({"c": c, "h": h, "w": w, "distance_mm": float(p.values[h, w])})
    out = export_csv(rows, _out_path(eff, "fdm.csv"), ("c", "h", "w", "distance_mm"))
    return _beside(out), {}, [out]


def cmd_stitch(eff):
    out = _out_path(eff, "stitch")
    if eff["input"] is not None:
        v = load_svol(eff["input"])
        z = v.dims[2] // 2 if eff["index"] is None else eff["index"]
        image = v.data[:, :, z]
    else:
        n = eff["size"]
        image = phantom((n, n, 8), (1.0, 1.0, 1.0), eff["seed"], "laminae+ellipsoids").data[:, :, 4]
    if eff["ami"]:
        ps = _load_model(eff["ami"], ami.KIND)
    else:
        ps = ami.init_ami(ami.DESK, eff["seed"])
    net, spec = ami_feature_net(ps)
    full = margin(spec)
    margins = eff["margins"] or (0, full)
    rows, outputs = [], []
    for m in margins:
        rep = run_stitch_analysis(image, net, spec, eff["core"], m, out)
        rows.append({"margin": m, "seam_mad": rep.seam_mad, "interior_mad": rep.interior_mad,
                     "ratio": rep.ratio, "max_dev": rep.max_dev,
                     "argmax_seam_distance": rep.argmax_seam_distance})
        outputs += [out / f"stitch_m{m}.csv", out / f"stitch_m{m}.pgm"]
        log.info("margin %d: max dev %.3g, seam/interior %.3g", m, rep.max_dev, rep.ratio)
    outputs.append(export_csv(rows, out / "summary.csv", tuple(rows[0])))
    return out / "manifest.json", {"ami": _model_entry(ps, eff["ami"])}, outputs


def cmd_export_slice(eff):
    v = load_svol(eff["input"])
    stack = extract_view(v, eff["view"]).slices
    i = len(stack) // 2 if eff["index"] is None else eff["index"]
    if not 0 <= i < len(stack):
        raise DataError(f"slice index {i} outside 0..{len(stack) - 1}")
    img = stack[i]
    clipped = int(np.count_nonzero((img < 0) | (img > 1)))
    if clipped:
        log.warning("clipping %d values outside [0, 1]", clipped)
    eff = {**eff, "clipped_values": clipped, "index": i}
    out = export_pgm(np.clip(img, 0.0, 1.0), _out_path(eff, "slice.pgm"))
    return _beside(out), {}, [out], eff


COMMANDS = {
    "gen-phantom": cmd_gen_phantom,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "fdm": cmd_fdm,
    "stitch": cmd_stitch,
    "export-slice": cmd_export_slice,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.verb is None:
            raise UsageError("missing verb; expected one of " + ", ".join(VERBS))
        given = {k: v for k, v in vars(ns).items() if k != "verb"}
        eff = _effective(ns.verb, given)
        result = COMMANDS[ns.verb](eff)
        manifest, models, outputs = result[:3]
        if len(result) == 4:
            eff = result[3]
        _write_manifest(manifest, ns.verb, eff, models, outputs)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    except (DataError, ContainerError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
