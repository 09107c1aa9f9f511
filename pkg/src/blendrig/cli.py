"""Command-line entry point: ``blendrig <subcommand> [flags]``.

Flag values come from the command line first, then from the JSON file given
with ``--config`` (a flat object, or one keyed by subcommand name), then from
built-in defaults.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .mesh import ARKIT_NAMES, Camera, DegenerateRotationError, LandmarkSet, RigError, apply_expression

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str, stage: str | None = None):
        super().__init__(message)
        self.code = code
        self.stage = stage


def config_error(msg):
    return CliError(EXIT_CONFIG, msg)


# ---------------------------------------------------------------------------
# helpers


def versions() -> dict:
    import scipy

    return {"blendrig": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


def json_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _need_file(path, what: str) -> Path:
    if path is None:
        raise config_error(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise config_error(f"{what} not found: {p}")
    return p


def _load_json(path, what: str):
    p = _need_file(path, what)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise config_error(f"{what} {p} is not valid JSON: {e}") from e


def _manifest_path(p) -> Path:
    p = Path(p)
    return p / "manifest.json" if p.is_dir() or p.suffix != ".json" else p


def _load_rig(path, what="rig manifest"):
    from .io import read_rig

    return read_rig(_need_file(_manifest_path(path), what))


def _load_prior(path):
    from .prior import PriorSpecError, load_prior

    try:
        return load_prior(None if path is None else _need_file(path, "prior file"))
    except (PriorSpecError, KeyError, json.JSONDecodeError) as e:
        raise config_error(f"invalid prior: {e}") from e


def _load_camera(spec):
    from .synth import default_camera

    if spec is None:
        return default_camera()
    d = spec if isinstance(spec, dict) else _load_json(spec, "camera file")
    try:
        return Camera.from_dict(d)
    except (KeyError, ValueError, TypeError) as e:
        raise config_error(f"invalid camera: {e}") from e


def _template_cfg(spec):
    from .synth import TemplateConfig

    if spec is None:
        return TemplateConfig()
    d = spec if isinstance(spec, dict) else _load_json(spec, "template config")
    try:
        return TemplateConfig.from_dict(d)
    except TypeError as e:
        raise config_error(f"invalid template config: {e}") from e


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_template(args):
    from .io import rig_hash, write_rig
    from .synth import make_template

    cfg = _template_cfg(args.cfg)
    if args.seed is not None and args.cfg is None:
        cfg = type(cfg).from_dict({**cfg.to_dict(), "seed": args.seed})
    rig = make_template(cfg)
    out = Path(args.out)
    out_dir = out.parent if out.suffix == ".json" else out
    path = write_rig(rig, out_dir, {"template_cfg": cfg.to_dict(), "seed": cfg.seed,
                                    "rig_hash": rig_hash(rig), "versions": versions()})
    print(f"wrote {path} ({rig.neutral.n_vertices} vertices, {len(rig.names)} shapes)")


def cmd_gen_data(args):
    from .synth import Diagnostics, IdentityCache, dataset_header, generate_dataset, make_template, write_dataset

    cfg = _template_cfg(args.template_cfg)
    prior = _load_prior(args.prior)
    cam = _load_camera(args.camera)
    if args.n is None or args.n < 1:
        raise config_error("--n must be a positive integer")
    seed = args.seed or 0
    tpl = make_template(cfg)
    diag = Diagnostics()
    samples = generate_dataset(args.n, tpl, prior, cam, seed, args.n_identities, args.identity_offset,
                               args.sample_offset, args.threads, IdentityCache(tpl), diag)
    samples = list(samples)
    header = dataset_header(seed, args.n, cam, prior, tpl, cfg, args.n_identities, args.identity_offset,
                            args.sample_offset, {"versions": versions()})
    digest = write_dataset(args.out, header, samples)
    print(f"wrote {args.n} samples to {args.out} (sha256 {digest[:12]}, pose resamples {diag.pose_resamples})")


def cmd_transfer(args):
    from .defxfer import transfer_rig
    from .io import read_obj, rig_hash, write_rig

    tpl = _load_rig(args.template, "template manifest")
    target = read_obj(_need_file(args.target, "target OBJ"))
    if not tpl.neutral.same_topology(target):
        raise config_error("target mesh does not share the template topology")
    rig = transfer_rig(tpl, target)
    path = write_rig(rig, args.out, {"source_rig_hash": rig_hash(tpl), "target": str(args.target),
                                     "versions": versions()})
    print(f"wrote {path}")


def _read_targets(path):
    from .io import landmarks_from_record, read_jsonl

    frames = []
    for rec in read_jsonl(_need_file(path, "targets file")):
        if rec.get("type") == "header":
            continue
        if "landmarks2d" in rec:  # dataset sample
            frames.append((rec.get("index"), LandmarkSet(np.asarray(rec["landmarks2d"], float))))
        else:
            frames.append((rec.get("frame"), landmarks_from_record(rec)))
    return frames


def cmd_fit(args):
    from .fitter import FitOptions, fit_frame
    from .io import write_jsonl

    rig = _load_rig(args.rig)
    frames = _read_targets(args.targets)
    if not frames:
        raise config_error("targets file has no frames")
    dim = frames[0][1].dim
    space = args.space or ("2d" if dim == 2 else "3d")
    opts = FitOptions(max_iters=args.max_iters, target_space=space)
    cam = _load_camera(args.camera) if space == "2d" else None
    out, prev = [], None
    for frame, target in frames:
        prev = fit_frame(rig, target, opts, prev if args.sequence else None, cam)
        out.append({"frame": frame, **prev.to_dict()})
    write_jsonl(args.out, out)
    print(f"fit {len(out)} frames -> {args.out}")


def _train_configs(spec):
    from .mixer import MixerConfig, TrainConfig

    d = {} if spec is None else (spec if isinstance(spec, dict) else _load_json(spec, "training config"))
    try:
        preset = d.get("preset", "desk")
        if preset not in ("desk", "full"):
            raise ValueError(f"unknown preset {preset!r}")
        mk = MixerConfig.desk if preset == "desk" else MixerConfig
        tk = TrainConfig.desk if preset == "desk" else TrainConfig
        return mk(**d.get("mixer", {})), tk(**d.get("train", {}))
    except (TypeError, ValueError) as e:
        raise config_error(f"invalid training config: {e}") from e


def _template_for_dataset(header, rig_path=None):
    from .io import rig_hash
    from .synth import TemplateConfig, make_template

    if rig_path is not None:
        return _load_rig(rig_path)
    if header.get("template_cfg") is None:
        raise config_error("dataset header has no template config; pass --rig")
    tpl = make_template(TemplateConfig.from_dict(header["template_cfg"]))
    if rig_hash(tpl) != header.get("template_hash"):
        raise config_error("template rebuilt from the dataset header does not match its hash")
    return tpl


def train_model(data_path, cfg_spec, out, seed=None, holdout_path=None, rig_path=None, log_path=None,
                quiet=False):
    from .io import file_sha256, write_jsonl
    from .evaluation import constant_baseline
    from .mixer import batch_from_samples, landmark_delta_basis, save_checkpoint, train
    from .synth import read_dataset

    mixer_cfg, train_cfg = _train_configs(cfg_spec)
    if seed is not None:
        train_cfg = type(train_cfg)(**{**asdict(train_cfg), "seed": seed})
    header, samples = read_dataset(_need_file(data_path, "training data"))
    tpl = _template_for_dataset(header, rig_path)
    pair = tpl.landmark_map.interocular_pair
    data = batch_from_samples(samples, pair)
    holdout = None
    if holdout_path is not None:
        _, hs = read_dataset(_need_file(holdout_path, "holdout data"))
        holdout = batch_from_samples(hs, pair)
    meta = {
        "seed": train_cfg.seed,
        "train_cfg": asdict(train_cfg),
        "data_sha256": file_sha256(data_path),
        "interocular_pair": list(pair),
        "train_mean_coefficients": constant_baseline(data.w).tolist(),
        "versions": versions(),
    }

    def progress(e):
        if not quiet:
            msg = f"step {e['step']:>6d}  lr {e['lr']:.2e}  loss {e['total']:.5f}"
            if "holdout" in e:
                msg += f"  holdout {e['holdout']:.5f}"
            print(msg, flush=True)

    res = train(data, train_cfg, mixer_cfg, landmark_delta_basis(tpl), holdout, checkpoint_path=None,
                meta=meta, progress=progress)
    digest = save_checkpoint(out, res.params, mixer_cfg, {**meta, "step": train_cfg.steps})
    if log_path is not None:
        write_jsonl(log_path, res.log)
    return digest, res


def cmd_train(args):
    digest, _ = train_model(args.data, args.cfg, args.out, args.seed, args.holdout, args.rig, args.log)
    print(f"wrote {args.out} (content hash {digest[:12]})")


def cmd_infer(args):
    from .io import read_jsonl, write_jsonl
    from .mixer import forward, load_checkpoint, normalize_landmarks

    params, cfg, header = _load_ckpt(args.ckpt)
    pair = header["meta"].get("interocular_pair")
    if pair is None:
        raise config_error("checkpoint does not record the inter-ocular landmark pair")
    frames = _read_targets(args.landmarks)
    if not frames:
        raise config_error("landmarks file has no frames")
    if any(f.dim != 2 for _, f in frames):
        raise config_error("inference needs 2D landmarks")
    X = normalize_landmarks(np.stack([f.points for _, f in frames]), pair)
    W, R6 = forward(params, X, cfg)
    recs = [{"type": "header", "names": list(ARKIT_NAMES), "ckpt_hash": header["content_hash"]}]
    recs += [{"frame": fr, "coefficients": np.asarray(w, float).tolist(), "r6": np.asarray(r, float).tolist()}
             for (fr, _), w, r in zip(frames, W, R6)]
    write_jsonl(args.out, recs)
    print(f"inferred {len(frames)} frames -> {args.out}")


def _load_ckpt(path):
    from .mixer import load_checkpoint

    try:
        return load_checkpoint(_need_file(path, "checkpoint"))
    except ValueError as e:
        raise config_error(str(e)) from e


def evaluate(ckpt, holdout_path, rig_path, with_fitter=True, threads=1):
    from .evaluation import evaluate_model
    from .io import file_sha256
    from .synth import IdentityCache, read_dataset

    params, cfg, header = _load_ckpt(ckpt)
    hh, samples = read_dataset(_need_file(holdout_path, "holdout data"))
    if not samples:
        raise config_error("holdout is empty")
    rig = _load_rig(rig_path)
    cams = [Camera.from_dict(c) for c in hh["cameras"]]
    cache = IdentityCache(rig)
    cache.prefetch([s.identity_id for s in samples], threads)
    base = header["meta"].get("train_mean_coefficients")
    reports, _ = evaluate_model(params, cfg, samples, cache, cams,
                                None if base is None else np.asarray(base), with_fitter=with_fitter)
    meta = {"ckpt_hash": header["content_hash"], "holdout_sha256": file_sha256(holdout_path),
            "holdout_seed": hh["seed"], "versions": versions()}
    return reports, meta


def cmd_eval(args):
    from .evaluation import format_table, report_json

    reports, meta = evaluate(args.ckpt, args.holdout, args.rig, not args.no_fitter, args.threads)
    Path(args.report).write_text(report_json(reports, meta) + "\n")
    print(format_table(reports))


def cmd_pairdiff(args):
    from .evaluation import pairwise_blendshape_diff
    from .io import rig_hash

    rig = _load_rig(args.rig)
    res = pairwise_blendshape_diff(rig)
    body = {"mean": res["mean"], "regions": res["regions"], "names": res["names"],
            "matrix": res["matrix"].tolist(), "rig_hash": rig_hash(rig)}
    Path(args.report).write_text(json.dumps(body, sort_keys=True) + "\n")
    regs = "  ".join(f"{k} {v:.3f}%" for k, v in res["regions"].items())
    print(f"pairwise blendshape diff: mean {res['mean']:.3f}%  {regs}")


def read_coefficients(path, names) -> np.ndarray:
    """Coefficients from JSON: a ``{name: value}`` object (missing names are 0)
    or a list with one value per rig shape."""
    d = _load_json(path, "coefficients file")
    if isinstance(d, dict) and "coefficients" in d:
        d = d["coefficients"]
    if isinstance(d, dict):
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise config_error(f"coefficient names not in the rig registry: {unknown}")
        return np.array([float(d.get(n, 0.0)) for n in names])
    w = np.asarray(d, dtype=float)
    if w.shape != (len(names),):
        raise config_error(f"expected {len(names)} coefficients, got {w.shape}")
    return w


def export_posed_mesh(rig_path, coeff_path, out):
    from .io import write_obj

    rig = _load_rig(rig_path)
    w = read_coefficients(coeff_path, rig.names)
    write_obj(out, apply_expression(rig, w), header=f"blendrig {__version__} posed mesh")
    return out


def cmd_pose(args):
    export_posed_mesh(args.rig, args.coefficients, args.out)
    print(f"wrote {args.out}")


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    template_cfg: dict = field(default_factory=dict)
    prior: str | None = None
    camera: dict | None = None
    n_identities: int = 200
    n_train: int = 20_000
    holdout_identities: int = 50
    n_holdout: int = 500
    training: dict = field(default_factory=lambda: {"preset": "desk"})
    fitter_row: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise config_error(f"unknown pipeline config keys: {sorted(extra)}")
        cfg = cls(**d)
        for k in ("n_identities", "n_train", "holdout_identities", "n_holdout"):
            if int(getattr(cfg, k)) < 1:
                raise config_error(f"{k} must be positive")
        if cfg.prior is not None and not Path(cfg.prior).exists():
            raise config_error(f"prior file not found: {cfg.prior}")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


def run_pipeline(cfg: PipelineConfig, out_dir, threads: int = 1, quiet: bool = False) -> dict:
    """gen-template -> gen-data (train, holdout) -> train -> eval, into ``out_dir``.

    Seeds: training samples use indices [0, n_train) and holdout samples
    [n_train, n_train + n_holdout) of the root seed's stream; holdout
    identities are numbered after the training identities, so the two sets
    share neither samples nor faces. Returns the provenance record.
    """
    from .evaluation import format_table, report_json
    from .io import file_sha256, rig_hash, write_rig
    from .synth import Diagnostics, IdentityCache, dataset_header, generate_dataset, make_template, write_dataset

    # validate everything before touching the output directory
    tcfg = _template_cfg(cfg.template_cfg)
    prior = _load_prior(cfg.prior)
    cam = _load_camera(cfg.camera)
    _train_configs(cfg.training)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = json_hash(cfg.to_dict())
    prov = {"config": cfg.to_dict(), "config_hash": cfg_hash, "seed": cfg.seed, "versions": versions(),
            "artifacts": {}}

    def say(msg):
        if not quiet:
            print(msg, flush=True)

    # wall-clock seconds per stage; kept out of the provenance record so that
    # stays byte-identical across reruns
    timings, t0 = {}, time.perf_counter()

    def lap(name):
        nonlocal t0
        now = time.perf_counter()
        timings[name] = round(now - t0, 3)
        t0 = now

    stage = "gen-template"
    try:
        tpl = make_template(tcfg)
        write_rig(tpl, out / "template", {"template_cfg": tcfg.to_dict(), "config_hash": cfg_hash,
                                          "seed": tcfg.seed, "versions": versions()})
        rig_path = out / "template" / "manifest.json"
        prov["artifacts"]["template"] = {"rig_hash": rig_hash(tpl)}
        say(f"[{stage}] {tpl.neutral.n_vertices} vertices")
        lap(stage)

        stage = "gen-data"
        cache = IdentityCache(tpl)
        files = {}
        for name, n, n_id, id_off, s_off in (
            ("train", cfg.n_train, cfg.n_identities, 0, 0),
            ("holdout", cfg.n_holdout, cfg.holdout_identities, cfg.n_identities, cfg.n_train),
        ):
            diag = Diagnostics()
            samples = list(generate_dataset(n, tpl, prior, cam, cfg.seed, n_id, id_off, s_off, threads, cache, diag))
            header = dataset_header(cfg.seed, n, cam, prior, tpl, tcfg, n_id, id_off, s_off,
                                    {"config_hash": cfg_hash, "versions": versions()})
            files[name] = out / f"{name}.jsonl"
            digest = write_dataset(files[name], header, samples)
            prov["artifacts"][name] = {"sha256": digest, "pose_resamples": diag.pose_resamples}
            say(f"[{stage}] {name}: {n} samples, {n_id} identities")
        lap(stage)

        stage = "train"
        ckpt = out / "model.ckpt"
        digest, _ = train_model(files["train"], cfg.training, ckpt, cfg.seed, files["holdout"], None,
                                out / "train_log.jsonl", quiet)
        prov["artifacts"]["checkpoint"] = {"content_hash": digest, "sha256": file_sha256(ckpt)}
        lap(stage)

        stage = "eval"
        reports, meta = evaluate(ckpt, files["holdout"], rig_path, cfg.fitter_row, threads)
        meta["config_hash"] = cfg_hash
        (out / "report.json").write_text(report_json(reports, meta) + "\n")
        (out / "report.txt").write_text(format_table(reports) + "\n")
        prov["artifacts"]["report"] = {"sha256": file_sha256(out / "report.json")}
        say(format_table(reports))
        lap(stage)
    except CliError as e:
        e.stage = e.stage or stage
        raise
    except Exception as e:
        err = _classify(e)
        err.stage = stage
        raise err from e
    (out / "provenance.json").write_text(json.dumps(prov, sort_keys=True, indent=2) + "\n")
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    return prov


def cmd_pipeline(args):
    d = _load_json(args.config, "pipeline config") if args.config else {}
    d = d.get("pipeline", d)
    if args.seed is not None:
        d = {**d, "seed": args.seed}
    try:
        cfg = PipelineConfig.from_dict(d)
    except TypeError as e:
        raise config_error(f"invalid pipeline config: {e}") from e
    run_pipeline(cfg, args.out, args.threads)


# ---------------------------------------------------------------------------
# argument parsing


# built-in defaults, applied after the command line and the --config file
DEFAULTS = {
    "gen-data": {"n_identities": 200, "identity_offset": 0, "sample_offset": 0},
    "fit": {"max_iters": 200},
    "pipeline": {"out": "pipeline_out"},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blendrig", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="root random seed (recorded in outputs)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--config", default=None, help="JSON file supplying flag values")
    p.add_argument("--version", action="version", version=f"blendrig {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-template", cmd_gen_template, "build the procedural template rig")
    sp.add_argument("--cfg", help="template config JSON")
    sp.add_argument("--out", help="output manifest path or directory")

    sp = add("gen-data", cmd_gen_data, "synthesize a landmark/coefficient dataset")
    sp.add_argument("--template-cfg")
    sp.add_argument("--prior", help="prior spec JSON (default: packaged prior)")
    sp.add_argument("--camera", help="camera JSON (default: 256x256 pinhole)")
    sp.add_argument("--n", type=int)
    sp.add_argument("--n-identities", type=int)
    sp.add_argument("--identity-offset", type=int)
    sp.add_argument("--sample-offset", type=int)
    sp.add_argument("--out")

    sp = add("transfer", cmd_transfer, "retarget a rig onto a new neutral mesh")
    sp.add_argument("--template")
    sp.add_argument("--target")
    sp.add_argument("--out")

    sp = add("fit", cmd_fit, "fit coefficients and pose to landmark frames")
    sp.add_argument("--rig")
    sp.add_argument("--targets")
    sp.add_argument("--out")
    sp.add_argument("--space", choices=("3d", "2d"))
    sp.add_argument("--camera")
    sp.add_argument("--max-iters", type=int)
    sp.add_argument("--sequence", action="store_true", default=None, help="warm-start each frame from the last")

    sp = add("train", cmd_train, "train the landmark-to-coefficient mixer")
    sp.add_argument("--data")
    sp.add_argument("--cfg", help="training config JSON: {preset, mixer: {...}, train: {...}}")
    sp.add_argument("--out")
    sp.add_argument("--holdout")
    sp.add_argument("--rig", help="template manifest (default: rebuilt from the dataset header)")
    sp.add_argument("--log", help="write the training log as JSON lines")

    sp = add("infer", cmd_infer, "run a trained mixer on 2D landmark frames")
    sp.add_argument("--ckpt")
    sp.add_argument("--landmarks")
    sp.add_argument("--out")

    sp = add("eval", cmd_eval, "MNE report for a checkpoint on a holdout set")
    sp.add_argument("--ckpt")
    sp.add_argument("--holdout")
    sp.add_argument("--rig")
    sp.add_argument("--report")
    sp.add_argument("--no-fitter", action="store_true", default=None)

    sp = add("pairdiff", cmd_pairdiff, "pairwise fully-activated blendshape MNE")
    sp.add_argument("--rig")
    sp.add_argument("--report")

    sp = add("pose", cmd_pose, "export the rig posed with given coefficients as OBJ")
    sp.add_argument("--rig")
    sp.add_argument("--coefficients")
    sp.add_argument("--out")

    sp = add("pipeline", cmd_pipeline, "template -> data -> train -> eval")
    sp.add_argument("--out", help="output directory")
    return p


REQUIRED = {
    "gen-template": ("out",),
    "gen-data": ("n", "out"),
    "transfer": ("template", "target", "out"),
    "fit": ("rig", "targets", "out"),
    "train": ("data", "out"),
    "infer": ("ckpt", "landmarks", "out"),
    "eval": ("ckpt", "holdout", "rig", "report"),
    "pairdiff": ("rig", "report"),
    "pose": ("rig", "coefficients", "out"),
}


def _check_outputs(args):
    """Fail fast (I/O error) if an output's parent directory is missing."""
    for k in ("out", "report", "log"):
        v = getattr(args, k, None)
        if v is None or (args.command in ("gen-template", "transfer", "pipeline") and k == "out"):
            continue
        parent = Path(v).resolve().parent
        if not parent.is_dir():
            raise CliError(EXIT_IO, f"output directory does not exist: {parent}")


def resolve_args(args):
    """Fill unset flags from the --config file, then from :data:`DEFAULTS`."""
    file_cfg = {}
    if args.config and args.command != "pipeline":
        d = _load_json(args.config, "config file")
        if not isinstance(d, dict):
            raise config_error("config file must hold a JSON object")
        file_cfg = d.get(args.command, d)
        for k in ("seed", "threads"):
            if getattr(args, k) is None and k in d:
                setattr(args, k, d[k])
    for src in (file_cfg, DEFAULTS.get(args.command, {})):
        for k, v in src.items():
            k = k.replace("-", "_")
            if hasattr(args, k) and getattr(args, k) is None:
                setattr(args, k, v)
    for k in ("sequence", "no_fitter"):
        if hasattr(args, k) and getattr(args, k) is None:
            setattr(args, k, False)
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    if args.threads < 1:
        raise config_error("--threads must be >= 1")
    missing = [k for k in REQUIRED.get(args.command, ()) if getattr(args, k, None) is None]
    if missing:
        raise config_error(f"{args.command}: missing required flag(s) " +
                           ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def _classify(e: Exception) -> CliError:
    from .defxfer import CGConvergenceError
    from .mixer import NonFiniteError, TrainingDiverged
    from .prior import PriorSpecError

    if isinstance(e, CliError):
        return e
    if isinstance(e, (CGConvergenceError, TrainingDiverged, NonFiniteError, FloatingPointError,
                      DegenerateRotationError, np.linalg.LinAlgError)):
        return CliError(EXIT_NUMERIC, f"numeric failure: {e}")
    if isinstance(e, (PriorSpecError, RigError, KeyError, ValueError, TypeError)):
        return CliError(EXIT_CONFIG, f"invalid input: {e}")
    if isinstance(e, OSError):
        return CliError(EXIT_IO, f"I/O error: {e}")
    raise e


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolve_args(args)
        _check_outputs(args)
        args.func(args)
    except Exception as e:  # mapped to exit codes below
        err = _classify(e)
        where = f"stage {err.stage}: " if err.stage else ""
        print(f"blendrig {args.command}: {where}{err}", file=sys.stderr)
        return err.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
