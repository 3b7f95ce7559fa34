"""Command-line entry point: scene generation, training, evaluation, regime
grids, latent-space analysis, and the render service.

Every subcommand honors ``--seed`` and ``--config`` (a flat JSON file whose
keys are overridden by explicit flags), and every run directory gets a
``run_manifest.json`` written before work starts and finalized on exit.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

from . import __version__

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# Public names for the decoder-query regimes: the latent estimator, the
# absolute-target-camera baseline, and the relative-to-view-0 baseline.
CONDITIONING_ALIASES = {
    "latent": "latent",
    "srt": "explicit_target_only",
    "upsrt": "explicit_relative",
}


class UsageError(Exception):
    """Bad arguments or config contents; exits 2 like an argparse error."""


# -- config layering ----------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return raw


def _layer_configs(args: argparse.Namespace, flag_names: dict) -> dict:
    """File values first, explicit flags on top (file < flags)."""
    flat = _load_config_file(getattr(args, "config", None))
    for attr, key in flag_names.items():
        value = getattr(args, attr, None)
        if value is not None:
            flat[key] = value
    return flat


def _split_model_train(flat: dict, extra_keys: set = frozenset()):
    from .model import ModelConfig
    from .training import TrainConfig

    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(flat) - model_fields - train_fields - set(extra_keys)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    model_cfg = ModelConfig(**{k: v for k, v in flat.items() if k in model_fields})
    train_cfg = TrainConfig(**{k: v for k, v in flat.items() if k in train_fields})
    try:
        model_cfg.validate()
        train_cfg.validate()
    except ValueError as e:
        raise UsageError(str(e))
    return model_cfg, train_cfg


def _resolve_conditioning(name: str) -> str:
    if name not in CONDITIONING_ALIASES:
        raise UsageError(
            f"conditioning must be one of {'/'.join(CONDITIONING_ALIASES)}, got {name!r}"
        )
    return CONDITIONING_ALIASES[name]


# -- run manifests ------------------------------------------------------


def _config_hash(flat: dict) -> str:
    return hashlib.sha256(
        json.dumps(flat, sort_keys=True, default=str).encode()
    ).hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@contextlib.contextmanager
def run_manifest(out_dir: str, argv: list, flat_config: dict, seed: int):
    """Write run_manifest.json up front; stamp finished/ok on the way out."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_manifest.json")
    doc = {
        "argv": list(argv),
        "config": flat_config,
        "config_hash": _config_hash(flat_config),
        "version": __version__,
        "seed": seed,
        "started": _utc_now(),
        "finished": None,
        "ok": None,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
    try:
        yield doc
        doc["ok"] = True
    except BaseException:
        doc["ok"] = False
        raise
    finally:
        doc["finished"] = _utc_now()
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)


# -- subcommands --------------------------------------------------------


def _cmd_scenegen(args: argparse.Namespace, argv: list) -> int:
    from .scenegen import GenConfig, generate_scene, write_shard
    from .scenegen.generate import shard_seeds

    flat = _layer_configs(args, {"seed": "seed", "scenes": "scenes",
                                 "height": "height", "width": "width"})
    seed = int(flat.get("seed", 0))
    count = int(flat.get("scenes", 1))
    if count < 0:
        raise UsageError(f"--scenes must be >= 0, got {count}")
    cfg = GenConfig(height=int(flat.get("height", 32)), width=int(flat.get("width", 32)))
    with run_manifest(args.out, argv, flat, seed):
        scenes = [generate_scene(s, cfg) for s in shard_seeds(seed, count)]
        write_shard(scenes, args.out, cfg)
    print(f"wrote {count} scenes to {args.out}")
    return EXIT_OK


def _dataset_from_args(args, model_cfg, train_cfg):
    from .scenegen import read_shard
    from .training import build_dataset

    if getattr(args, "data", None):
        scenes = read_shard(args.data)
        need = train_cfg.n_train_scenes + train_cfg.n_eval_scenes
        if len(scenes) < need:
            raise ValueError(
                f"shard {args.data} holds {len(scenes)} scenes; "
                f"config needs {need} (train {train_cfg.n_train_scenes} "
                f"+ eval {train_cfg.n_eval_scenes})"
            )
        return build_dataset(
            model_cfg, train_cfg,
            scenes=scenes[: train_cfg.n_train_scenes],
            eval_scenes=scenes[train_cfg.n_train_scenes : need],
        )
    return build_dataset(model_cfg, train_cfg)


_TRAIN_FLAGS = {
    "seed": "seed",
    "sigma_input": "sigma_input",
    "sigma_target": "sigma_target",
    "steps": "steps",
    "batch_size": "batch_size",
    "base_lr": "base_lr",
    "warmup_steps": "warmup_steps",
    "eval_every": "eval_every",
    "train_scenes": "n_train_scenes",
    "eval_scenes": "n_eval_scenes",
}


def _cmd_train(args: argparse.Namespace, argv: list) -> int:
    from .model import SceneModel
    from .training import Trainer

    flat = _layer_configs(args, dict(_TRAIN_FLAGS))
    if args.conditioning is not None:
        flat["conditioning"] = _resolve_conditioning(args.conditioning)
    model_cfg, train_cfg = _split_model_train(flat)
    with run_manifest(args.out, argv, flat, train_cfg.seed):
        dataset = _dataset_from_args(args, model_cfg, train_cfg)
        model = SceneModel(model_cfg, init_seed=train_cfg.seed)
        trainer = Trainer(model, train_cfg, dataset)
        report = trainer.run(
            metrics_path=os.path.join(args.out, "metrics.jsonl"),
            checkpoint_path=os.path.join(args.out, "checkpoint.ckpt"),
        )
        with open(os.path.join(args.out, "report.json"), "w") as f:
            json.dump(report.to_json(), f, indent=2)
    print(f"trained {train_cfg.steps} steps; "
          f"eval PSNR {report.psnr_right_half:.2f} dB -> {args.out}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace, argv: list) -> int:
    from .model import load_checkpoint
    from .training import TrainConfig, evaluate
    from .scenegen import GenConfig, generate_scene, read_shard
    from .scenegen.generate import shard_seeds

    flat = _layer_configs(args, {"seed": "seed", "scenes": "scenes"})
    seed = int(flat.get("seed", 0))
    count = int(flat.get("scenes", 8))
    model, _, meta = load_checkpoint(args.checkpoint)
    if getattr(args, "data", None):
        scenes = read_shard(args.data)
    else:
        gen = GenConfig(height=model.cfg.image_height, width=model.cfg.image_width)
        scenes = [generate_scene(s, gen) for s in shard_seeds(seed, count)]
    report = evaluate(model, scenes, regime=model.cfg.conditioning,
                      step=int(meta.get("step", 0)))
    payload = report.to_json()
    if args.out:
        with run_manifest(args.out, argv, flat, seed):
            with open(os.path.join(args.out, "report.json"), "w") as f:
                json.dump(payload, f, indent=2)
    print(json.dumps(payload))
    return EXIT_OK


def _parse_regimes(spec) -> list:
    """'latent:0:0,upsrt:0:0.1' or a JSON-style list of [name, si, st]."""
    triples = []
    if isinstance(spec, str):
        parts = [p for p in spec.split(",") if p]
        for part in parts:
            bits = part.split(":")
            if len(bits) != 3:
                raise UsageError(f"regime {part!r} is not name:sigma_input:sigma_target")
            triples.append((bits[0], bits[1], bits[2]))
    elif isinstance(spec, list):
        for row in spec:
            if not isinstance(row, (list, tuple)) or len(row) != 3:
                raise UsageError(f"regime entry {row!r} is not [name, sigma_input, sigma_target]")
            triples.append(tuple(row))
    else:
        raise UsageError("regimes must be a comma list or a JSON array")
    out = []
    for name, si, st in triples:
        try:
            out.append((_resolve_conditioning(str(name)), float(si), float(st)))
        except ValueError:
            raise UsageError(f"regime sigmas must be numbers, got {si!r}/{st!r}")
    if not out:
        raise UsageError("at least one regime is required")
    return out


def _cmd_grid(args: argparse.Namespace, argv: list) -> int:
    from .training import run_regime_grid

    flat = _layer_configs(args, dict(_TRAIN_FLAGS, regimes="regimes"))
    regimes = _parse_regimes(flat.pop("regimes", None) or "")
    model_cfg, train_cfg = _split_model_train(flat)
    with run_manifest(args.out, argv, dict(flat, regimes=[list(r) for r in regimes]),
                      train_cfg.seed):
        rows = run_regime_grid(model_cfg, train_cfg, regimes,
                               out_path=os.path.join(args.out, "grid.json"))
    for row in rows:
        line = {k: row[k] for k in ("conditioning", "sigma_input", "sigma_target")}
        line["psnr_right_half"] = row.get("psnr_right_half")
        line["error"] = row.get("error")
        print(json.dumps(line))
    return EXIT_OK


def _analysis_scenes(model, seed: int, count: int) -> list:
    from .scenegen import GenConfig, generate_scene
    from .scenegen.generate import shard_seeds

    gen = GenConfig(height=model.cfg.image_height, width=model.cfg.image_width)
    return [generate_scene(s, gen) for s in shard_seeds(seed, count)]


def _cmd_analyze(args: argparse.Namespace, argv: list) -> int:
    from . import analysis
    from .model import load_checkpoint

    flat = _layer_configs(args, {"seed": "seed", "scenes": "scenes", "k": "k",
                                 "steps": "steps", "component": "component",
                                 "span": "span", "scene_seed": "scene_seed"})
    seed = int(flat.get("seed", 0))
    count = int(flat.get("scenes", 200))
    model, _, _ = load_checkpoint(args.checkpoint)
    task = args.task

    if task == "pca":
        k = int(flat.get("k", 3))
        with run_manifest(args.out, argv, flat, seed):
            samples = analysis.collect_latents(model, _analysis_scenes(model, seed, count))
            pca = analysis.fit_pca(samples, k)
            with open(os.path.join(args.out, "pca.json"), "w") as f:
                f.write(pca.to_json())
        print(f"fitted {k} components over {3 * count} latents -> {args.out}/pca.json")
        return EXIT_OK

    if task == "correlate":
        k = int(flat.get("k", 3))
        with run_manifest(args.out, argv, flat, seed):
            samples = analysis.collect_latents(model, _analysis_scenes(model, seed, count))
            if args.pca:
                with open(args.pca) as f:
                    pca = analysis.PcaModel.from_json(f.read())
            else:
                pca = analysis.fit_pca(samples, k)
            rows = analysis.correlate(samples, pca)
            with open(os.path.join(args.out, "correlations.csv"), "w") as f:
                f.write(analysis.correlation_csv(rows))
        print(f"wrote {len(rows)} component rows -> {args.out}/correlations.csv")
        return EXIT_OK

    if task == "traverse":
        if not args.pca:
            raise UsageError("analyze traverse needs --pca (fitted components give the direction)")
        with open(args.pca) as f:
            pca = analysis.PcaModel.from_json(f.read())
        component = int(flat.get("component", 0))
        if not 0 <= component < pca.components.shape[0]:
            raise UsageError(f"component {component} out of range for {pca.components.shape[0]}-component PCA")
        scene_seed = int(flat.get("scene_seed", 0))
        span = float(flat.get("span", 1.0))
        steps = int(flat.get("steps", 7))
        with run_manifest(args.out, argv, flat, seed):
            scenes = _analysis_scenes(model, scene_seed, 1)
            sample = analysis.collect_latents(model, scenes)[0]
            slsr = model.encode_views(scenes[0].input_images[None])
            frames = analysis.traverse(
                model, slsr, sample.latent,
                pca.components[component].astype("float32"), steps, span,
            )
            paths = analysis.save_traversal(frames, args.out)
        print(f"wrote {len(paths['frames'])} frames + strip -> {args.out}")
        return EXIT_OK

    if task == "epe-train":
        steps = int(flat.get("steps", 5000))
        epe_cfg = analysis.EpeConfig(steps=steps, seed=seed)
        with run_manifest(args.out, argv, flat, seed):
            scenes = _analysis_scenes(model, seed, count)
            readout = analysis.train_epe(
                model, scenes, epe_cfg,
                metrics_path=os.path.join(args.out, "epe_metrics.jsonl"),
            )
            readout.save(os.path.join(args.out, "readout.npz"))
        print(f"trained readout {steps} steps on {count} scenes -> {args.out}/readout.npz")
        return EXIT_OK

    if task == "epe-eval":
        if not args.readout:
            raise UsageError("analyze epe-eval needs --readout")
        readout = analysis.EpeReadout.load(args.readout, model)
        scenes = _analysis_scenes(model, seed, count)
        report = analysis.eval_epe(readout, scenes)
        if args.out:
            with run_manifest(args.out, argv, flat, seed):
                with open(os.path.join(args.out, "epe_report.json"), "w") as f:
                    json.dump(report, f, indent=2)
        print(json.dumps(report))
        return EXIT_OK

    raise UsageError(f"unknown analyze task {task!r}")


def _cmd_serve(args: argparse.Namespace, argv: list) -> int:
    from .serve import run_server

    run_server(args.checkpoint, args.pca, host=args.host, port=args.port,
               static_dir=args.static)
    return EXIT_OK


# -- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentnvs",
        description="Unposed novel view synthesis: toy scenes, training, analysis, serving.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat JSON config file (flags override it)")
        p.add_argument("--seed", type=int, help="root RNG seed")

    p = sub.add_parser("scenegen", help="generate a shard of toy scenes")
    common(p)
    p.add_argument("--scenes", type=int, help="number of scenes")
    p.add_argument("--out", required=True, help="output shard directory")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.set_defaults(func=_cmd_scenegen)

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--data", help="scene shard to train on (default: generate)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--conditioning", choices=sorted(CONDITIONING_ALIASES))
    p.add_argument("--sigma-input", dest="sigma_input", type=float)
    p.add_argument("--sigma-target", dest="sigma_target", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--train-scenes", dest="train_scenes", type=int)
    p.add_argument("--eval-scenes", dest="eval_scenes", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="scene shard to evaluate on (default: generate)")
    p.add_argument("--scenes", type=int, help="eval scene count when generating")
    p.add_argument("--out", help="optional run directory for report.json")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grid", help="train the pose-regime grid")
    common(p)
    p.add_argument("--regimes", help="comma list: name:sigma_input:sigma_target")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--train-scenes", dest="train_scenes", type=int)
    p.add_argument("--eval-scenes", dest="eval_scenes", type=int)
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("analyze", help="latent-space analysis over a checkpoint")
    p.add_argument("task", choices=["pca", "correlate", "traverse", "epe-train", "epe-eval"])
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenes", type=int, help="scene count for collection/eval")
    p.add_argument("--k", type=int, help="PCA component count")
    p.add_argument("--pca", help="fitted pca.json (correlate/traverse)")
    p.add_argument("--component", type=int, help="traversal component index")
    p.add_argument("--span", type=float, help="traversal half-range")
    p.add_argument("--steps", type=int, help="traversal frames / readout steps")
    p.add_argument("--scene-seed", dest="scene_seed", type=int, help="traversal scene")
    p.add_argument("--readout", help="trained readout.npz (epe-eval)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("serve", help="HTTP render service")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pca", help="fitted pca.json to expose to clients")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--static", help="UI bundle directory to serve at /")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    threads = os.environ.get("RUST_NVS_THREADS")
    if threads:
        # Worker-count knob; must land before numpy/BLAS load in the handlers.
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "NUMBA_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args, ["latentnvs"] + argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
