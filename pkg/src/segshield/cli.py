"""segshield command line.

    segshield <train|attack|eval-style|eval-grid|noise-sweep|report>
              --config cfg.json [--out DIR] [--seed N] [--set key.path=value ...]

Everything a run writes goes under the output directory. All files except
``manifest.json`` (which carries timestamps) are byte-identical across reruns
with the same config. Exit codes: 0 ok, 2 config error, 3 io error, 4 runtime
error; failures print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .blackbox import Ensemble, ModelQuery, ensemble_pgd_attack, simba_attack
from .evalpipes.corruptions import CorruptionError, CorruptionSpec
from .evalpipes.grid import grid_privacy_eval, make_gallery, mock_detector
from .evalpipes.noise import SWEEP_COLUMNS, aggregate_sweeps, noise_sweep
from .evalpipes.style import HISTOGRAM_COLUMNS, ROW_COLUMNS, SUMMARY_COLUMNS, style_robustness_eval
from .imageio import ImageFormatError, encode_pgm, read_image
from .numcore import rtn
from .refmodel.automask import auto_masks
from .refmodel.model import ModelMismatchError, load_model, save_model, sidecar_path
from .refmodel.scenes import SceneConfig
from .refmodel.train import HELDOUT_SEED_BASE, evaluate, heldout_prompts, train
from .report import RECORD_SCHEMA, SUMMARY_COLUMNS as REPORT_COLUMNS
from .report import atomic_write, json_text, summarize_records, write_csv, write_json
from .seeds import sub_seed
from .whitebox import AttackConfig, AttackConfigError, AttackObjective, run_attack, scaled_k, text_target

log = logging.getLogger("segshield")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4
COMMANDS = ("train", "attack", "eval-style", "eval-grid", "noise-sweep", "report")
WHITEBOX = ("fgsm", "figa", "jsma")
BLACKBOX = ("simba", "ensemble-pgd")
DEFAULT_EPSILON = {"fgsm": 1.0, "figa": 5.0, "jsma": 5.0, "simba": 8.0, "ensemble-pgd": 1.0}
GRID_COLUMNS = (
    "label", "precision", "recall", "f1", "precision_undefined",
    "precision_mean", "precision_std", "recall_mean", "recall_std", "f1_mean", "f1_std",
    "tp", "fp", "fn", "tn",
)  # fmt: skip
TABLE_COLUMNS = ("method", "n", "iou_pct", "mse", "linf", "l2", "queries")

NUM = (int, float)
# leaf: (accepted types, default); nested dicts are config sections
SCHEMA = {
    "seed": (int, 0),
    "model": (str, None),
    "input_dir": (str, None),
    "output_dir": (str, None),
    "workers": (int, 1),
    "n_images": (int, 5),
    "train": {
        "seed": (int, None),
        "steps": (int, 2000),
        "lr": (NUM, 0.01),
        "batch": (int, 8),
        "eval_images": (int, 100),
    },
    "attack": {
        "method": (str, "fgsm"),
        "epsilon": (NUM, None),
        "k": ((int, str), None),
        "iters": (int, 200),
        "objective": (str, "invert"),
        "target_file": (str, None),
        "text": (str, None),
        "stop": (NUM, None),
        "max_queries": (int, 20000),
        "basis": (str, "dct"),
        "surrogates": (list, []),
        "eps_ball": (NUM, 32.0),
    },
    "eval_style": {
        "specs": (list, ["identity", "night", "snow", "wet", "drops", "blank"]),
        "k_masks": (int, 3),
        "grid_step": (int, 8),
    },
    "eval_grid": {
        "detector": (str, "oracle"),
        "permutations": (int, 5),
        "grids_per_label": (int, 10),
        "labels": (int, 16),
        "per_label": (int, 3),
        "cell": (int, 16),
        "p": (NUM, 0.5),
        "p_hit": (NUM, 0.9),
    },
    "noise_sweep": {
        "sigmas": (list, [0, 2, 4, 8, 16, 32, 64]),
        "trials": (int, 10),
        "attack_dir": (str, None),
    },
    "report": {
        "inputs": (list, []),
    },
}


class CliError(Exception):
    code = EXIT_RUNTIME
    kind = "runtime-error"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ConfigError(CliError):
    code = EXIT_CONFIG
    kind = "config-invalid"


class InputError(CliError):
    code = EXIT_IO
    kind = "io-error"


class MismatchError(CliError):
    code = EXIT_IO
    kind = "model-mismatch"


# -- config ------------------------------------------------------------------------


def _defaults(schema):
    return {k: _defaults(v) if isinstance(v, dict) else copy.deepcopy(v[1]) for k, v in schema.items()}


def _merge(schema, base, given, prefix=""):
    if not isinstance(given, dict):
        raise ConfigError("expected an object", prefix.rstrip(".") or None)
    for key, value in given.items():
        path = prefix + key
        if key not in schema:
            raise ConfigError(f"unknown key {path!r}", path)
        spec = schema[key]
        if isinstance(spec, dict):
            _merge(spec, base[key], value, path + ".")
            continue
        types = spec[0]
        ok = value is None or (isinstance(value, types) and not isinstance(value, bool))
        if isinstance(value, int) and not isinstance(value, bool) and types is NUM:
            value = float(value)
        if not ok:
            raise ConfigError(f"{path}: invalid value {value!r}", path)
        base[key] = value


def _parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not key.path=value", key or None)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config(path, overrides=()) -> dict:
    cfg = _defaults(SCHEMA)
    if path is not None:
        try:
            given = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc.strerror}", "config") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}", "config") from exc
        _merge(SCHEMA, cfg, given)
    for ov in overrides:
        _merge(SCHEMA, cfg, ov)
    for key in ("workers", "n_images"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be at least 1", key)
    return cfg


def _require_file(path, field):
    if path is None:
        raise ConfigError(f"{field} is required", field)
    if not Path(path).is_file():
        raise InputError(f"{field}: no such file {path}", field)
    return Path(path)


def _require_dir(path, field):
    if path is None:
        raise ConfigError(f"{field} is required", field)
    if not Path(path).is_dir():
        raise InputError(f"{field}: no such directory {path}", field)
    return Path(path)


def _load_model(path, field="model"):
    path = _require_file(path, field)
    if not sidecar_path(path).is_file():
        raise InputError(f"{field}: checkpoint sidecar {sidecar_path(path)} missing", field)
    try:
        return load_model(path)
    except ModelMismatchError as exc:
        raise MismatchError(str(exc), field) from exc
    except (rtn.RtnFormatError, ValueError, KeyError) as exc:
        raise InputError(f"{field}: unreadable checkpoint {path}: {exc}", field) from exc


def _scene_config(model) -> SceneConfig:
    scene = dict(model.train_config.get("scene", {}))
    for key, value in scene.items():
        if isinstance(value, list):
            scene[key] = tuple(value)
    return SceneConfig(**scene)


# -- inputs ------------------------------------------------------------------------


def _input_images(cfg, model, need_prompts: bool):
    """``[(name, image, prompt or None)]`` from ``input_dir`` or synthetic scenes.

    Input directories may hold ``prompts.json`` mapping file names to [x, y];
    images without an entry are prompted at their largest automatic mask.
    """
    if cfg["input_dir"] is None:
        base = HELDOUT_SEED_BASE + sub_seed(cfg["seed"], "scene")
        samples = heldout_prompts(cfg["n_images"], _scene_config(model), base=base)
        return [(f"scene{i:03d}", img, tuple(int(v) for v in p)) for i, (img, p, _) in enumerate(samples)]
    root = _require_dir(cfg["input_dir"], "input_dir")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in (".pgm", ".rtn"))
    if not files:
        raise InputError(f"input_dir {root} holds no .pgm or .rtn images", "input_dir")
    prompts = {}
    if (root / "prompts.json").is_file():
        try:
            prompts = json.loads((root / "prompts.json").read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"prompts.json is not valid JSON: {exc}", "input_dir") from exc
    out = []
    for f in files:
        try:
            img = read_image(f)
        except (ImageFormatError, rtn.RtnFormatError) as exc:
            raise InputError(str(exc), "input_dir") from exc
        p = prompts.get(f.name)
        if p is None and need_prompts:
            found = auto_masks(model, img, k=1)
            if not found.entries:
                raise CliError(f"{f.name}: no prompt given and no object found")
            p = found.ids[0]
        out.append((f.stem, img, None if p is None else (int(p[0]), int(p[1]))))
    return out


def _pool_map(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _rtn_bytes(arr) -> bytes:
    return rtn.encode(np.asarray(arr, np.float32))


def _py(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


# -- subcommands -------------------------------------------------------------------


def cmd_train(cfg, out: Path) -> dict:
    t = cfg["train"]
    seed = t["seed"] if t["seed"] is not None else sub_seed(cfg["seed"], "train")
    if t["steps"] < 1 or t["batch"] < 1 or not t["lr"] > 0:
        raise ConfigError("train.steps and train.batch must be >= 1 and train.lr > 0", "train")
    model = train(seed, steps=t["steps"], lr=t["lr"], batch=t["batch"])
    save_model(model, out / "model.rtn")
    write_csv(
        out / "train_loss.csv",
        [{"step": i + 1, "loss": v} for i, v in enumerate(model.loss_trace)],
        ("step", "loss"),
    )
    scores = evaluate(model, heldout_prompts(t["eval_images"]))
    metrics = {
        "schema": RECORD_SCHEMA,
        "seed": seed,
        "heldout_images": len(scores),
        "heldout_mean_iou": float(np.mean(scores)),
        "final_loss": float(model.loss_trace[-1]),
    }
    write_json(out / "train_metrics.json", metrics)
    return metrics


def _objective(a, original, shape):
    mode = a["objective"]
    if mode == "invert":
        return AttackObjective.invert(original)
    if mode == "destroy":
        return AttackObjective.destroy(shape)
    if mode == "custom":
        if (a["target_file"] is None) == (a["text"] is None):
            raise ConfigError("custom objective needs exactly one of target_file or text", "attack.target_file")
        if a["text"] is not None:
            try:
                return AttackObjective.custom(text_target(a["text"], *shape))
            except ValueError as exc:
                raise ConfigError(str(exc), "attack.text") from exc
        target = read_image(a["target_file"])[..., 0]
        if target.shape != tuple(shape):
            raise ConfigError(f"target mask {target.shape} does not match image {tuple(shape)}", "attack.target_file")
        return AttackObjective.custom((target > 0).astype(np.uint8))
    raise ConfigError(f"unknown objective {mode!r}; expected invert, destroy or custom", "attack.objective")


def _check_attack(cfg):
    a = cfg["attack"]
    method = a["method"]
    if method not in WHITEBOX + BLACKBOX:
        raise ConfigError(f"unknown method {method!r}; expected one of {WHITEBOX + BLACKBOX}", "attack.method")
    if method == "figa" and a["k"] is None:
        raise ConfigError("attack.k is required for method 'figa' (an integer or \"scaled\")", "attack.k")
    if isinstance(a["k"], str) and a["k"] != "scaled":
        raise ConfigError(f"attack.k must be an integer or \"scaled\", got {a['k']!r}", "attack.k")
    if a["iters"] < 1:
        raise ConfigError("attack.iters must be at least 1", "attack.iters")
    if a["epsilon"] is not None and not a["epsilon"] > 0:
        raise ConfigError("attack.epsilon must be positive", "attack.epsilon")
    if a["objective"] not in ("invert", "destroy", "custom"):
        raise ConfigError(f"unknown objective {a['objective']!r}", "attack.objective")
    if a["target_file"] is not None:
        _require_file(a["target_file"], "attack.target_file")
    if method == "simba":
        if a["basis"] not in ("dct", "pixel"):
            raise ConfigError("attack.basis must be dct or pixel", "attack.basis")
        if a["max_queries"] < 1:
            raise ConfigError("attack.max_queries must be at least 1", "attack.max_queries")
    if method == "ensemble-pgd":
        if len(a["surrogates"]) < 2:
            raise ConfigError("ensemble-pgd needs at least two surrogate checkpoints", "attack.surrogates")
        for i, s in enumerate(a["surrogates"]):
            _require_file(s, f"attack.surrogates[{i}]")


def _attack_one(cfg, model, surrogates, index, name, image, prompt) -> dict:
    a = cfg["attack"]
    method = a["method"]
    eps = a["epsilon"] if a["epsilon"] is not None else DEFAULT_EPSILON[method]
    query = ModelQuery(model, prompt)
    original = (query(image) >= 0.5).astype(np.uint8)
    objective = _objective(a, original, image.shape[:2])
    k = None
    if method in WHITEBOX:
        k = scaled_k(image.shape) if a["k"] == "scaled" else a["k"]
        try:
            conf = AttackConfig(method, eps, k, a["iters"], a["stop"])
            result = run_attack(model, prompt, image, objective, conf)
        except AttackConfigError as exc:
            raise ConfigError(str(exc), "attack") from exc
        k = conf.k
    elif method == "simba":
        seed = sub_seed(cfg["seed"], "attack") + index
        result = simba_attack(
            ModelQuery(model, prompt), image, objective, eps, a["max_queries"], a["basis"], a["stop"], seed
        )
    else:
        result = ensemble_pgd_attack(
            ModelQuery(model, prompt), Ensemble(surrogates), image, prompt, objective,
            eps_step=eps, eps_ball=a["eps_ball"], iters=a["iters"], stop=a["stop"],
        )  # fmt: skip
    record = {
        "schema": RECORD_SCHEMA,
        "kind": "attack",
        "image": name,
        "method": method if method not in ("simba",) else f"simba-{a['basis']}",
        "prompt": [int(prompt[0]), int(prompt[1])],
        "prompt_id": f"{prompt[0]},{prompt[1]}",
        "objective": a["objective"],
        "epsilon": float(eps),
        "k": k,
        "iterations": int(result.iterations),
        "queries": result.queries,
        "stop_reason": result.stop_reason,
        "original_area": int(original.sum()),
        **{m: float(result.metrics[m]) for m in ("iou", "iou_target", "loss", "mse", "linf", "l2")},
    }
    trace_cols = ("iteration", "loss", "iou", "iou_target")
    trace = [{c: _py(e.get(c)) for c in trace_cols} for e in result.trace]
    return {"record": record, "image": image, "adversarial": result.adversarial, "trace": trace}


def cmd_attack(cfg, out: Path) -> dict:
    _check_attack(cfg)
    model = _load_model(cfg["model"])
    surrogates = [_load_model(s, f"attack.surrogates[{i}]") for i, s in enumerate(cfg["attack"]["surrogates"])]
    if cfg["attack"]["method"] != "ensemble-pgd":
        surrogates = []
    images = _input_images(cfg, model, need_prompts=True)
    results = _pool_map(
        lambda item: _attack_one(cfg, model, surrogates, item[0], *item[1]),
        list(enumerate(images)),
        cfg["workers"],
    )
    for r in results:
        name = r["record"]["image"]
        atomic_write(out / "images" / f"{name}.orig.rtn", _rtn_bytes(r["image"]))
        atomic_write(out / "images" / f"{name}.adv.rtn", _rtn_bytes(r["adversarial"]))
        atomic_write(out / "images" / f"{name}.adv.pgm", encode_pgm(r["adversarial"]))
        write_json(out / "records" / f"{name}.json", r["record"])
        write_csv(out / "traces" / f"{name}.csv", r["trace"], ("iteration", "loss", "iou", "iou_target"))
    records = [r["record"] for r in results]
    write_csv(out / "summary.csv", summarize_records(records), REPORT_COLUMNS)
    return {"images": len(records), "method": cfg["attack"]["method"]}


def cmd_eval_style(cfg, out: Path) -> dict:
    e = cfg["eval_style"]
    try:
        specs = [CorruptionSpec.parse(s, seed=sub_seed(cfg["seed"], "scene")) for s in e["specs"]]
    except (CorruptionError, ValueError, AttributeError) as exc:
        raise ConfigError(str(exc), "eval_style.specs") from exc
    if e["k_masks"] < 1:
        raise ConfigError("eval_style.k_masks must be at least 1", "eval_style.k_masks")
    model = _load_model(cfg["model"])
    images = _input_images(cfg, model, need_prompts=False)
    names = [n for n, _, _ in images]
    parts = _pool_map(
        lambda item: style_robustness_eval(model, [item[1]], specs, e["k_masks"], e["grid_step"], [item[0]]),
        images,
        cfg["workers"],
    )
    report = parts[0]
    for p in parts[1:]:
        report.rows.extend(p.rows)
    write_csv(out / "style_rows.csv", report.rows, ROW_COLUMNS)
    write_csv(out / "style_summary.csv", report.summary(), SUMMARY_COLUMNS)
    write_csv(out / "style_histogram.csv", report.histogram(), HISTOGRAM_COLUMNS)
    return {"images": len(names), "specs": report.specs}


def cmd_eval_grid(cfg, out: Path) -> dict:
    g = cfg["eval_grid"]
    if g["labels"] < 9:
        raise ConfigError("eval_grid.labels must be at least 9", "eval_grid.labels")
    if g["permutations"] < 1 or g["grids_per_label"] < 1 or g["per_label"] < 1 or g["cell"] < 1:
        raise ConfigError("eval_grid counts must be positive", "eval_grid")
    seed = sub_seed(cfg["seed"], "grid")
    gallery = make_gallery(g["labels"], g["per_label"], g["cell"], seed)
    try:
        detector = mock_detector(g["detector"], gallery, seed, g["p"], g["p_hit"])
    except ValueError as exc:
        raise ConfigError(str(exc), "eval_grid.detector") from exc
    result = grid_privacy_eval(detector, gallery, None, g["permutations"], g["grids_per_label"], seed)
    rows = []
    for label, rep in result.reports.items():
        d = rep.as_dict()
        rows.append({"label": label, **{c: d.get(c) for c in GRID_COLUMNS if c != "label"}})
    write_csv(out / "grid_scores.csv", rows, GRID_COLUMNS)
    write_json(out / "grid_trials.json", result.manifest)
    return {"labels": len(rows), "detector": g["detector"]}


def cmd_noise_sweep(cfg, out: Path) -> dict:
    n = cfg["noise_sweep"]
    adir = _require_dir(n["attack_dir"], "noise_sweep.attack_dir")
    if n["trials"] < 1:
        raise ConfigError("noise_sweep.trials must be at least 1", "noise_sweep.trials")
    sigmas = n["sigmas"]
    if not sigmas or any(not isinstance(s, NUM) or isinstance(s, bool) or s < 0 for s in sigmas):
        raise ConfigError("noise_sweep.sigmas must be nonnegative numbers", "noise_sweep.sigmas")
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ConfigError("noise_sweep.sigmas must be strictly increasing", "noise_sweep.sigmas")
    model = _load_model(cfg["model"])
    records = _read_records(adir / "records")
    if not records:
        raise InputError(f"no attack records under {adir / 'records'}", "noise_sweep.attack_dir")
    seed = sub_seed(cfg["seed"], "noise")

    def one(item):
        j, rec = item
        name = rec["image"]
        try:
            x0 = rtn.load(adir / "images" / f"{name}.orig.rtn")
            xa = rtn.load(adir / "images" / f"{name}.adv.rtn")
        except (OSError, rtn.RtnFormatError) as exc:
            raise InputError(f"attack images for {name}: {exc}", "noise_sweep.attack_dir") from exc
        return rec, noise_sweep(model, tuple(rec["prompt"]), x0, xa, sigmas, n["trials"], seed + j)

    results = _pool_map(one, list(enumerate(records)), cfg["workers"])
    per_image = [{"image": rec["image"], **row} for rec, res in results for row in res.rows]
    write_csv(out / "sweep_per_image.csv", per_image, ("image",) + SWEEP_COLUMNS)
    total = aggregate_sweeps([res for _, res in results])
    write_csv(out / "sweep.csv", total.rows, SWEEP_COLUMNS)
    summary = {
        "schema": RECORD_SCHEMA,
        "images": len(results),
        "sigmas": [float(s) for s in sigmas],
        "trials": n["trials"],
        "attack_l2_mean": total.l2,
        "attack_l2": {rec["image"]: res.l2 for rec, res in results},
        "attack_iou": {rec["image"]: rec["iou"] for rec, _ in results},
    }
    write_json(out / "sweep.json", summary)
    return {"images": len(results)}


def _read_records(folder: Path) -> list[dict]:
    if not folder.is_dir():
        return []
    out = []
    for f in sorted(folder.glob("*.json")):
        try:
            rec = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{f}: not valid JSON", "report.inputs") from exc
        if rec.get("schema") != RECORD_SCHEMA or rec.get("kind") != "attack":
            raise InputError(f"{f}: not a version-{RECORD_SCHEMA} attack record", "report.inputs")
        out.append(rec)
    return out


def _pm(mean, std, scale=1.0):
    if mean is None:
        return ""
    return f"{mean * scale:.2f} ± {std * scale:.2f}"


def cmd_report(cfg, out: Path) -> dict:
    inputs = cfg["report"]["inputs"]
    if not inputs:
        raise ConfigError("report.inputs must list attack output directories", "report.inputs")
    records = []
    for i, d in enumerate(inputs):
        folder = _require_dir(d, f"report.inputs[{i}]")
        found = _read_records(folder / "records")
        if not found:
            raise InputError(f"no attack records under {folder / 'records'}", f"report.inputs[{i}]")
        records.extend(found)
    summary = summarize_records(records)
    write_csv(out / "summary.csv", summary, REPORT_COLUMNS)
    table = [
        {
            "method": s["method"],
            "n": s["n"],
            "iou_pct": _pm(s["iou_mean"], s["iou_std"], 100.0),
            "mse": _pm(s["mse_mean"], s["mse_std"]),
            "linf": _pm(s["linf_mean"], s["linf_std"]),
            "l2": _pm(s["l2_mean"], s["l2_std"]),
            "queries": _pm(s["queries_mean"], s["queries_std"]),
        }
        for s in summary
    ]
    write_csv(out / "table.csv", table, TABLE_COLUMNS)
    return {"records": len(records), "methods": [s["method"] for s in summary]}


HANDLERS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval-style": cmd_eval_style,
    "eval-grid": cmd_eval_grid,
    "noise-sweep": cmd_noise_sweep,
    "report": cmd_report,
}


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="segshield", description="Red-team a point-promptable segmentation model.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="root seed (overrides seed)")
    ap.add_argument("--model", help="model checkpoint (overrides model)")
    ap.add_argument("--input-dir", help="image directory (overrides input_dir)")
    ap.add_argument("--workers", type=int, help="worker threads (overrides workers)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _emit_error(err: CliError) -> int:
    payload = {"error": err.kind, "message": str(err), "field": err.field, "exit_code": err.code}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return err.code


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return EXIT_OK
        return _emit_error(ConfigError("invalid command line", "argv"))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        overrides = [_parse_override(s) for s in args.set]
        flags = {
            "output_dir": args.out,
            "seed": args.seed,
            "model": args.model,
            "input_dir": args.input_dir,
            "workers": args.workers,
        }
        overrides.append({k: v for k, v in flags.items() if v is not None})
        cfg = load_config(args.config, overrides)
        if cfg["output_dir"] is None:
            raise ConfigError("an output directory is required (--out or output_dir)", "output_dir")
        out = Path(cfg["output_dir"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {out}: {exc.strerror}", "output_dir") from exc
        started = _stamp()
        t0 = time.perf_counter()
        result = HANDLERS[args.command](cfg, out)
        manifest = {
            "command": args.command,
            "config": cfg,
            "version": __version__,
            "started": started,
            "finished": _stamp(),
            "seconds": round(time.perf_counter() - t0, 3),
            "result": result,
        }
        atomic_write(out / "manifest.json", json_text(manifest))
        return EXIT_OK
    except CliError as err:
        return _emit_error(err)
    except (OSError, ImageFormatError, rtn.RtnFormatError) as exc:
        return _emit_error(InputError(str(exc)))
    except Exception as exc:  # anything else is a runtime failure, still reported as JSON
        log.debug("runtime failure", exc_info=True)
        return _emit_error(CliError(f"{type(exc).__name__}: {exc}"))


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
