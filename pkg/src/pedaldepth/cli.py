"""Command-line entry point: synthesis, caching, training, prediction, eval.

Commands
--------
synth corpus      generate a toy MIDI corpus with known pedal gestures
synth render      render performances through the room simulator
features extract  audio -> PDFE feature caches
targets build     MIDI -> PDGT ground-truth depth caches
train             train a model from cached features/targets
predict           checkpoint + audio -> pedal curve CSV
eval              prediction CSVs vs ground-truth caches -> metric reports
robustness run    leave-one-room-out MAE matrix and room statistics
pipeline          corpus -> render -> features -> targets -> train -> eval

Every command is deterministic under --seed, logs its resolved
configuration, and writes files atomically.  Exit codes: 0 success, 2 usage
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import glob
import hashlib
import json
import logging
import os
import sys

import click
import numpy as np

from . import containers, datagen, evaluation, robustness, roomsim
from . import features as feat
from . import midiio
from . import targets as targets_mod
from . import training as training_mod
from .errors import DataError, NumericError
from .model import DESK_CONFIG, ModelConfig, load_checkpoint

log = logging.getLogger("pedaldepth")

CACHE_ENV_VAR = "PEDALDEPTH_CACHE"


def _setup_logging():
    if not logging.getLogger().handlers:
        logging.basicConfig(
            level=logging.INFO,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
            stream=sys.stderr,
        )


def _log_config(command: str, config: dict) -> None:
    log.info("%s config: %s", command, json.dumps(config, sort_keys=True, default=str))


def cache_root(explicit: str | None = None) -> str:
    if explicit:
        return explicit
    return os.environ.get(CACHE_ENV_VAR, "cache")


@click.group()
def cli():
    """Continuous sustain-pedal depth estimation toolkit."""
    _setup_logging()


@cli.group()
def synth():
    """Synthetic data generation."""


@synth.command("corpus")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--pieces", default=20, show_default=True, type=int)
@click.option("--duration", "duration_s", default=15.0, show_default=True, type=float)
@click.option("--note-rate", default=3.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
def synth_corpus(out_dir, pieces, duration_s, note_rate, seed):
    """Generate a toy MIDI corpus plus a gesture sidecar."""
    _log_config("synth corpus", dict(out=out_dir, pieces=pieces, duration=duration_s,
                                     note_rate=note_rate, seed=seed))
    corpus = datagen.generate_corpus(
        pieces, seed=seed, duration_s=duration_s, note_rate_hz=note_rate
    )
    datagen.write_corpus(out_dir, corpus)
    click.echo(f"wrote {pieces} pieces to {out_dir}")


@synth.command("render")
@click.option("--midi", "midi_dir", required=True, type=click.Path(exists=True))
@click.option("--rooms", "rooms_file", default=None, type=click.Path(exists=True),
              help="Room config JSON; defaults to the stock four rooms.")
@click.option("--room-names", default=None,
              help="Comma-separated subset of room names to render.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--split-file", default=None, type=click.Path(exists=True),
              help="JSON {piece_id: train|val|test}; defaults to a seeded split.")
@click.option("--sample-rate", default=44100, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def synth_render(midi_dir, rooms_file, room_names, out_dir, split_file, sample_rate, seed):
    """Render every MIDI piece through every room; write WAVs and a manifest."""
    _log_config("synth render", dict(midi=midi_dir, rooms=rooms_file, out=out_dir,
                                     split=split_file, sample_rate=sample_rate, seed=seed))
    rooms = roomsim.load_rooms(rooms_file) if rooms_file else roomsim.default_rooms()
    if room_names:
        wanted = room_names.split(",")
        by_name = {r.name: r for r in rooms}
        unknown = [n for n in wanted if n not in by_name]
        if unknown:
            raise DataError(f"unknown room names: {', '.join(unknown)}")
        rooms = [by_name[n] for n in wanted]

    midi_paths = sorted(glob.glob(os.path.join(midi_dir, "*.mid")))
    if not midi_paths:
        raise DataError(f"no .mid files found under {midi_dir}")
    perfs = []
    for path in midi_paths:
        with open(path, "rb") as fh:
            perfs.append((os.path.splitext(os.path.basename(path))[0], midiio.parse_smf(fh.read())))

    if split_file:
        with open(split_file) as fh:
            split = json.load(fh)
    else:
        split = datagen.split_pieces([pid for pid, _ in perfs], seed=seed)

    rows = roomsim.render_dataset(perfs, rooms, split, out_dir, sample_rate, seed)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    roomsim.write_manifest(manifest_path, rows)
    containers.write_text_atomic(
        os.path.join(out_dir, "split.json"), json.dumps(split, indent=2, sort_keys=True)
    )
    roomsim.write_rooms(os.path.join(out_dir, "rooms.json"), rooms)
    click.echo(f"rendered {len(rows)} (piece, room) pairs; manifest at {manifest_path}")


@cli.group("features")
def features_group():
    """Feature extraction."""


@features_group.command("extract")
@click.option("--in", "in_dir", default=None, type=click.Path(exists=True),
              help="Directory of WAV files.")
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True),
              help="Dataset manifest; extracts every audio_path in it.")
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help=f"Cache directory (default $" + CACHE_ENV_VAR + " or ./cache).")
@click.option("--hop", default=250, show_default=True, type=int,
              help="Training segmentation hop recorded alongside the cache.")
def features_extract(in_dir, manifest_path, out_dir, hop):
    """Extract [T, 249] log-mel+MFCC matrices into PDFE caches."""
    out_dir = cache_root(out_dir)
    _log_config("features extract", dict(in_dir=in_dir, manifest=manifest_path,
                                         out=out_dir, hop=hop))
    if (in_dir is None) == (manifest_path is None):
        raise click.UsageError("provide exactly one of --in or --manifest")
    if manifest_path:
        rows = roomsim.load_manifest(manifest_path)
        jobs = [(f"{row['piece_id']}__{row['room']}", row["audio_path"]) for row in rows]
    else:
        paths = sorted(glob.glob(os.path.join(in_dir, "*.wav")))
        if not paths:
            raise DataError(f"no .wav files found under {in_dir}")
        jobs = [(os.path.splitext(os.path.basename(p))[0], p) for p in paths]

    os.makedirs(out_dir, exist_ok=True)
    for stem, path in jobs:
        matrix = feat.build_features(feat.load_wav(path))
        containers.save_features(os.path.join(out_dir, f"{stem}.pdfe"), matrix.values)
    containers.write_text_atomic(
        os.path.join(out_dir, "extraction.json"),
        json.dumps({"hop": hop, "n_files": len(jobs), "feature_dim": feat.N_FEATURES},
                   indent=2, sort_keys=True),
    )
    click.echo(f"extracted {len(jobs)} feature files into {out_dir}")


@cli.group("targets")
def targets_group():
    """Ground-truth target construction."""


@targets_group.command("build")
@click.option("--midi", "midi_dir", default=None, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True))
@click.option("--features", "features_dir", default=None, type=click.Path(exists=True),
              help="Feature cache dir; target lengths then match feature frames exactly.")
@click.option("--out", "out_dir", default=None, type=click.Path())
def targets_build(midi_dir, manifest_path, features_dir, out_dir):
    """Sample CC64 onto the 100 fps grid and cache piece-level depth curves."""
    out_dir = cache_root(out_dir)
    _log_config("targets build", dict(midi=midi_dir, manifest=manifest_path,
                                      features=features_dir, out=out_dir))
    if (midi_dir is None) == (manifest_path is None):
        raise click.UsageError("provide exactly one of --midi or --manifest")
    if manifest_path:
        rows = roomsim.load_manifest(manifest_path)
        jobs = sorted({(row["piece_id"], row["midi_path"]) for row in rows})
    else:
        paths = sorted(glob.glob(os.path.join(midi_dir, "*.mid")))
        if not paths:
            raise DataError(f"no .mid files found under {midi_dir}")
        jobs = [(os.path.splitext(os.path.basename(p))[0], p) for p in paths]

    os.makedirs(out_dir, exist_ok=True)
    for piece_id, midi_path in jobs:
        with open(midi_path, "rb") as fh:
            perf = midiio.parse_smf(fh.read())
        n_frames = _target_frames(piece_id, perf, features_dir)
        curve = midiio.cc64_to_frames(perf, n_frames)
        containers.save_curves(os.path.join(out_dir, f"{piece_id}.pdgt"), curve.values)
    click.echo(f"built {len(jobs)} target files into {out_dir}")


def _target_frames(piece_id: str, perf: midiio.MidiPerformance, features_dir: str | None) -> int:
    if features_dir:
        candidates = sorted(
            glob.glob(os.path.join(features_dir, f"{piece_id}__*.pdfe"))
            + glob.glob(os.path.join(features_dir, f"{piece_id}.pdfe"))
        )
        if candidates:
            values, _rate = containers.load_features(candidates[0])
            return values.shape[0]
    return int(np.floor(perf.duration_s * 100)) + 1


@cli.command("train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_dir", default=None, type=click.Path())
@click.option("--targets", "targets_dir", default=None, type=click.Path())
@click.option("--rooms", "room_names", default="R1", show_default=True,
              help="Comma-separated training rooms.")
@click.option("--out", "run_dir", required=True, type=click.Path())
@click.option("--model", "model_preset", default="desk", show_default=True,
              type=click.Choice(["desk", "full"]))
@click.option("--steps", default=2000, show_default=True, type=int)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--lr", default=5e-4, show_default=True, type=float)
@click.option("--hop", default=250, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--resume", is_flag=True, default=False)
def train_cmd(manifest_path, features_dir, targets_dir, room_names, run_dir,
              model_preset, steps, batch_size, lr, hop, seed, resume):
    """Train on the train split of the given rooms; validate on the val split."""
    features_dir = cache_root(features_dir)
    targets_dir = cache_root(targets_dir)
    rooms = tuple(room_names.split(","))
    model_config = DESK_CONFIG if model_preset == "desk" else ModelConfig()
    train_config = training_mod.TrainConfig(
        batch_size=batch_size, learning_rate=lr, max_steps=steps, seed=seed,
        checkpoint_every=max(1, steps // 4), val_every=max(1, steps // 8),
    )
    _log_config("train", dict(manifest=manifest_path, features=features_dir,
                              targets=targets_dir, rooms=rooms, out=run_dir,
                              model=model_config.to_dict(), training=train_config.to_dict()))

    rows = roomsim.load_manifest(manifest_path)
    robustness.check_caches(rows, set(rooms), features_dir, targets_dir)
    train_data = robustness.build_room_dataset(rows, rooms, "train", features_dir, targets_dir, hop)
    try:
        val_data = robustness.build_room_dataset(rows, rooms, "val", features_dir, targets_dir, hop)
    except DataError:
        val_data = None
    result = training_mod.fit(
        train_data, val_data, model_config, train_config, run_dir=run_dir, resume=resume
    )
    click.echo(
        f"trained to step {result.final_step}; best val frame-MAE "
        f"{result.best_val_mae:.4f} at step {result.best_step}"
    )


@cli.command("predict")
@click.option("--audio", "audio_path", required=True, type=click.Path(exists=True),
              help="A WAV file or a directory of WAV files.")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output CSV (single file input) or directory.")
def predict_cmd(audio_path, ckpt_path, out_path):
    """Checkpoint + audio -> per-frame pedal curve CSV at 100 fps."""
    _log_config("predict", dict(audio=audio_path, checkpoint=ckpt_path, out=out_path))
    model, step, _extras, _meta = load_checkpoint(ckpt_path)
    log.info("loaded checkpoint at step %d (%d parameters)", step, model.parameter_count())

    if os.path.isdir(audio_path):
        wavs = sorted(glob.glob(os.path.join(audio_path, "*.wav")))
        if not wavs:
            raise DataError(f"no .wav files found under {audio_path}")
        os.makedirs(out_path, exist_ok=True)
        for wav in wavs:
            stem = os.path.splitext(os.path.basename(wav))[0]
            _predict_one(model, wav, os.path.join(out_path, f"{stem}.csv"))
        click.echo(f"wrote {len(wavs)} prediction files to {out_path}")
    else:
        _predict_one(model, audio_path, out_path)
        click.echo(f"wrote {out_path}")


def _predict_one(model, wav_path: str, out_csv: str) -> None:
    matrix = feat.build_features(feat.load_wav(wav_path))
    if matrix.values.shape[1] != model.config.in_features:
        raise DataError(
            f"feature dimension mismatch: checkpoint expects {model.config.in_features} "
            f"columns, extractor produced {matrix.values.shape[1]}"
        )
    curves = training_mod.predict_piece(model, matrix)
    lines = ["time_s,depth,onset,offset"]
    for t in range(len(curves["depth"])):
        lines.append(
            f"{t / 100:.2f},{curves['depth'][t]:.6f},{curves['onset'][t]:.6f},{curves['offset'][t]:.6f}"
        )
    containers.write_text_atomic(out_csv, "\n".join(lines) + "\n")
    log.info("%s: %d frames, depth std %.4f", wav_path, len(curves["depth"]),
             float(np.std(curves["depth"])))


def read_prediction_csv(path: str) -> np.ndarray:
    """Depth column of a prediction CSV."""
    depths = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["time_s", "depth"]:
            raise DataError(f"{path}: not a prediction CSV")
        for line in fh:
            depths.append(float(line.split(",")[1]))
    return np.array(depths)


@cli.command("eval")
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--theta-min", default=0.01, show_default=True, type=float)
@click.option("--theta-max", default=0.40, show_default=True, type=float)
@click.option("--theta-step", default=0.01, show_default=True, type=float)
def eval_cmd(pred_dir, gt_dir, out_dir, theta_min, theta_max, theta_step):
    """Score prediction CSVs against PDGT ground truth, per piece and pooled."""
    _log_config("eval", dict(pred=pred_dir, gt=gt_dir, out=out_dir,
                             theta=[theta_min, theta_max, theta_step]))
    grid = tuple(
        round(theta_min + k * theta_step, 10)
        for k in range(int(round((theta_max - theta_min) / theta_step)) + 1)
    )
    pred_files = {os.path.splitext(os.path.basename(p))[0]: p
                  for p in glob.glob(os.path.join(pred_dir, "*.csv"))}
    gt_files = {os.path.splitext(os.path.basename(p))[0]: p
                for p in glob.glob(os.path.join(gt_dir, "*.pdgt"))}

    def _gt_key(pred_stem: str) -> str | None:
        if pred_stem in gt_files:
            return pred_stem
        base = pred_stem.split("__")[0]  # room-suffixed prediction vs piece-level truth
        return base if base in gt_files else None

    pairs = {stem: _gt_key(stem) for stem in pred_files}
    unmatched = sorted([stem for stem, key in pairs.items() if key is None])
    if unmatched or not pred_files:
        raise DataError(
            "prediction files without matching ground truth: " + ", ".join(unmatched)
            if unmatched
            else f"no prediction CSVs found under {pred_dir}"
        )

    preds, gts = {}, {}
    for stem, key in sorted(pairs.items()):
        pred = read_prediction_csv(pred_files[stem])
        curves, _scalars, _rate = containers.load_curves(gt_files[key])
        gt = curves[:, 0].astype(np.float64)
        if len(pred) != len(gt):
            raise DataError(f"{stem}: prediction has {len(pred)} frames, ground truth {len(gt)}")
        preds[stem] = pred
        gts[stem] = gt

    os.makedirs(out_dir, exist_ok=True)
    for stem in preds:
        report = evaluation.evaluate({stem: preds[stem]}, {stem: gts[stem]}, grid)
        report.write_json(os.path.join(out_dir, f"{stem}.metrics.json"))
    aggregate = evaluation.evaluate(preds, gts, grid)
    aggregate.write_json(os.path.join(out_dir, "aggregate.metrics.json"))
    aggregate.write_tolerance_csv(os.path.join(out_dir, "aggregate.tolerance.csv"))
    click.echo(
        f"evaluated {len(preds)} pieces: binary F1 {aggregate.binary[2]:.4f}, "
        f"MAE {aggregate.mae:.4f} -> {out_dir}"
    )


@cli.group("robustness")
def robustness_group():
    """Acoustic robustness experiments."""


@robustness_group.command("run")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_dir", default=None, type=click.Path())
@click.option("--targets", "targets_dir", default=None, type=click.Path())
@click.option("--rooms", "rooms_file", default=None, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n-boot", default=10_000, show_default=True, type=int)
@click.option("--resume", is_flag=True, default=False)
def robustness_run(plan_path, manifest_path, features_dir, targets_dir, rooms_file,
                   out_dir, n_boot, resume):
    """Run the leave-one-room-out plan and write MAE + distribution stats."""
    features_dir = cache_root(features_dir)
    targets_dir = cache_root(targets_dir)
    plan = robustness.load_plan(plan_path)
    _log_config("robustness run", dict(plan=plan.to_dict(), manifest=manifest_path,
                                       out=out_dir, n_boot=n_boot))
    rows = roomsim.load_manifest(manifest_path)
    rooms = roomsim.load_rooms(rooms_file) if rooms_file else roomsim.default_rooms()

    result = robustness.run_loo(plan, rows, features_dir, targets_dir, out_dir, resume=resume)
    robustness.write_loo_csv(os.path.join(out_dir, "results.csv"), result)

    rt60_order = robustness.order_rooms_by_rt60(
        [r for r in rooms if r.name in plan.test_rooms]
    )
    for combo_name in result.runs:
        run_dir = os.path.join(out_dir, f"train_{combo_name.replace('+', '_')}")
        model = robustness._best_model(run_dir)
        preds_by_room, gts_by_room, cis = {}, {}, {}
        for room in plan.test_rooms:
            _mae, preds, gts = robustness.room_mae(
                model, rows, room, "test", features_dir, targets_dir
            )
            preds_by_room[room] = np.concatenate([preds[k] for k in sorted(preds)])
            gts_by_room[room] = np.concatenate([gts[k] for k in sorted(gts)])
            if n_boot > 0:
                cis[room] = robustness.bootstrap_bias_ci(preds, gts, n_boot, plan.seed)
        stats = robustness.distribution_stats(preds_by_room, gts_by_room, cis or None)
        by_room = {s.room: s for s in stats}
        ordered = [by_room[name] for name in rt60_order if name in by_room]
        slope, monotone = robustness.bias_trend(ordered)
        robustness.write_stats_json(
            os.path.join(out_dir, f"stats_{combo_name.replace('+', '_')}.json"),
            stats,
            extra={
                "rt60_order": rt60_order,
                "bias_slope_per_rank": slope,
                "bias_monotone": monotone,
            },
        )
    click.echo(f"robustness results in {out_dir}")


@cli.command("pipeline")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--pieces", default=5, show_default=True, type=int)
@click.option("--duration", "duration_s", default=12.0, show_default=True, type=float)
@click.option("--rooms", "room_names", default="R1", show_default=True)
@click.option("--steps", default=500, show_default=True, type=int)
@click.option("--batch-size", default=8, show_default=True, type=int)
@click.option("--hop", default=250, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--dry-run", is_flag=True, default=False)
@click.option("--resume", is_flag=True, default=False)
def pipeline_cmd(out_dir, pieces, duration_s, room_names, steps, batch_size, hop,
                 seed, dry_run, resume):
    """End-to-end toy run: corpus, render, features, targets, train, eval."""
    config = dict(pieces=pieces, duration_s=duration_s, rooms=room_names, steps=steps,
                  batch_size=batch_size, hop=hop, seed=seed)
    _log_config("pipeline", config)
    rooms = tuple(room_names.split(","))
    dirs = {
        "corpus": os.path.join(out_dir, "corpus"),
        "dataset": os.path.join(out_dir, "dataset"),
        "features": os.path.join(out_dir, "features"),
        "targets": os.path.join(out_dir, "targets"),
        "run": os.path.join(out_dir, "run"),
        "preds": os.path.join(out_dir, "preds"),
        "metrics": os.path.join(out_dir, "metrics"),
    }

    stages = [
        ("corpus", dict(pieces=pieces, duration_s=duration_s, seed=seed)),
        ("render", dict(rooms=rooms, seed=seed)),
        ("features", dict()),
        ("targets", dict()),
        ("train", dict(steps=steps, batch_size=batch_size, hop=hop, seed=seed)),
        ("predict", dict()),
        ("eval", dict()),
    ]
    if dry_run:
        click.echo("pipeline plan (dry run, nothing written):")
        for name, stage_cfg in stages:
            click.echo(f"  {name}: {json.dumps(stage_cfg, sort_keys=True, default=str)} -> "
                       f"{dirs.get(name, dirs['run'])}")
        return

    state_path = os.path.join(out_dir, "pipeline_state.json")
    state = {}
    if resume and os.path.exists(state_path):
        with open(state_path) as fh:
            state = json.load(fh)

    def stage_hash(name, stage_cfg) -> str:
        payload = json.dumps({"name": name, "config": stage_cfg, "base": config},
                             sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()

    def done(name, stage_cfg) -> bool:
        return resume and state.get(name) == stage_hash(name, stage_cfg)

    def mark(name, stage_cfg) -> None:
        state[name] = stage_hash(name, stage_cfg)
        containers.write_text_atomic(state_path, json.dumps(state, indent=2, sort_keys=True))

    ctx = click.get_current_context()
    for name, stage_cfg in stages:
        if done(name, stage_cfg):
            log.info("pipeline stage '%s' already complete, skipping", name)
            continue
        log.info("pipeline stage '%s' starting", name)
        try:
            if name == "corpus":
                ctx.invoke(synth_corpus, out_dir=dirs["corpus"], pieces=pieces,
                           duration_s=duration_s, note_rate=3.0, seed=seed)
            elif name == "render":
                ctx.invoke(synth_render, midi_dir=dirs["corpus"], rooms_file=None,
                           room_names=",".join(rooms), out_dir=dirs["dataset"],
                           split_file=None, sample_rate=44100, seed=seed)
            elif name == "features":
                ctx.invoke(features_extract, in_dir=None,
                           manifest_path=os.path.join(dirs["dataset"], "manifest.csv"),
                           out_dir=dirs["features"], hop=hop)
            elif name == "targets":
                ctx.invoke(targets_build, midi_dir=None,
                           manifest_path=os.path.join(dirs["dataset"], "manifest.csv"),
                           features_dir=dirs["features"], out_dir=dirs["targets"])
            elif name == "train":
                ctx.invoke(train_cmd, manifest_path=os.path.join(dirs["dataset"], "manifest.csv"),
                           features_dir=dirs["features"], targets_dir=dirs["targets"],
                           room_names=",".join(rooms), run_dir=dirs["run"],
                           model_preset="desk", steps=steps, batch_size=batch_size,
                           lr=5e-4, hop=hop, seed=seed, resume=resume)
            elif name == "predict":
                _pipeline_predict(dirs, rooms)
            elif name == "eval":
                ctx.invoke(eval_cmd, pred_dir=dirs["preds"], gt_dir=dirs["targets"],
                           out_dir=dirs["metrics"], theta_min=0.01, theta_max=0.40,
                           theta_step=0.01)
        except (DataError, NumericError) as exc:
            raise type(exc)(f"pipeline stage '{name}' failed: {exc}") from exc
        mark(name, stage_cfg)
    click.echo(f"pipeline complete: {out_dir}")


def _pipeline_predict(dirs: dict, rooms: tuple[str, ...]) -> None:
    rows = roomsim.load_manifest(os.path.join(dirs["dataset"], "manifest.csv"))
    ckpt = os.path.join(dirs["run"], "checkpoints", "best.ckpt")
    if not os.path.exists(ckpt):
        from .training import _latest_checkpoint

        ckpt = _latest_checkpoint(dirs["run"])
        if ckpt is None:
            raise DataError("pipeline train stage produced no checkpoint")
    model, _step, _extras, _meta = load_checkpoint(ckpt)
    os.makedirs(dirs["preds"], exist_ok=True)
    n = 0
    for row in rows:
        if row["split"] != "test" or row["room"] != rooms[0]:
            continue
        _predict_one(model, row["audio_path"],
                     os.path.join(dirs["preds"], f"{row['piece_id']}.csv"))
        n += 1
    if n == 0:
        raise DataError("no test pieces to predict")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)
    except NumericError as exc:
        click.echo(f"numeric error: {exc}", err=True)
        sys.exit(4)


if __name__ == "__main__":
    main()
