"""Command-line entry point wiring configs, files and the six workflows."""

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .attack import AttackConfig, export_attack, generate_attack, write_history_csv
from .channel import AugmentConfig, simulate_channel
from .errors import AirmaskError, ConfigError, FormatError, InvalidInputError
from .metrics import evaluate_attack, report_to_csv, report_to_json
from .parallel import thread_map
from .psychoacoustic import compute_masking_thresholds
from .room_sim import compute_rir, generate_rooms, load_rooms, save_rooms
from .signal_core import Waveform, read_wav, stft, write_wav
from .toy_asr import Vocab, init_model, load_model, save_model, synth_corpus, save_corpus, load_corpus, train


def _summary(doc):
    print(json.dumps(doc, sort_keys=True))


def _require_files(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise FileNotFoundError(f"input path does not exist: {p}")


def _rirs_for(variants, cfg, threads):
    r = cfg["rooms"]
    return thread_map(
        lambda v: compute_rir(v, max_order=r["max_order"], max_seconds=r["rir_seconds"]),
        variants,
        threads,
    )


def cmd_synth_corpus(args, cfg):
    vocab = Vocab.from_letters(cfg["corpus"]["letters"])
    corpus = synth_corpus(
        vocab,
        cfg["corpus"]["count"],
        (cfg["corpus"]["len_min"], cfg["corpus"]["len_max"]),
        seed=cfgmod.sub_seed(cfg, "corpus"),
    )
    os.makedirs(args.out, exist_ok=True)
    save_corpus(args.out, corpus)
    _summary(
        {
            "command": "synth-corpus",
            "out": args.out,
            "utterances": len(corpus),
            "letters": cfg["corpus"]["letters"],
        }
    )


def cmd_train_asr(args, cfg):
    _require_files(args.corpus)
    corpus = load_corpus(args.corpus)
    vocab = Vocab.from_letters(cfg["corpus"]["letters"])
    a = cfg["asr"]
    model = init_model(vocab, a["hidden1"], a["hidden2"], seed=cfgmod.sub_seed(cfg, "train"))
    model, report = train(
        model,
        corpus,
        epochs=a["epochs"],
        learning_rate=a["learning_rate"],
        seed=cfgmod.sub_seed(cfg, "train"),
        momentum=a["momentum"],
        batch_size=a["batch_size"],
        holdout_fraction=a["holdout_fraction"],
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "model.asrt")
    save_model(path, model)
    _summary(
        {
            "command": "train-asr",
            "model": path,
            "epochs": report.epochs,
            "train_utterances": report.n_train,
            "holdout_utterances": report.n_holdout,
            "holdout_accuracy": report.holdout_accuracy,
            "final_loss": report.final_loss,
        }
    )


def cmd_make_rooms(args, cfg):
    template = cfgmod.room_template(cfg)
    gen_cfg = cfgmod.room_gen_config(cfg)
    variants = generate_rooms(template, gen_cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "rooms.json")
    save_rooms(path, template, gen_cfg, variants)
    doc = {"command": "make-rooms", "rooms": path, "count": len(variants)}
    if args.rir_wav is not None:
        if not 0 <= args.rir_wav < len(variants):
            raise InvalidInputError(f"--rir-wav index {args.rir_wav} out of range")
        rir = _rirs_for([variants[args.rir_wav]], cfg, 1)[0]
        wav_path = os.path.join(args.out, f"rir_{args.rir_wav:04d}.wav")
        write_wav(wav_path, Waveform(np.clip(rir.taps, -1.0, 1.0)))
        doc["rir_wav"] = wav_path
    _summary(doc)


def cmd_channel(args, cfg):
    _require_files(args.input, args.rooms)
    w = read_wav(args.input)
    aug = cfgmod.augment_config(cfg)
    rir = None
    if aug.enable_rooms:
        if args.rooms is None:
            raise InvalidInputError("channel with room stage enabled needs --rooms")
        _, _, variants = load_rooms(args.rooms)
        if not 0 <= args.room_id < len(variants):
            raise InvalidInputError(f"--room-id {args.room_id} out of range")
        rir = _rirs_for([variants[args.room_id]], cfg, 1)[0]
    rng = np.random.default_rng(aug.seed)
    out = simulate_channel(w, rir, aug, rng=rng)
    write_wav(args.output, out.waveform)
    _summary(
        {
            "command": "channel",
            "out": args.output,
            "left_pad": out.left_pad,
            "right_pad": out.right_pad,
            "samples": len(out.waveform),
        }
    )


def _attack_config(cfg, target, threads, out_dir):
    a = cfg["attack"]
    return AttackConfig(
        target=target,
        lambda_step=a["lambda_step"],
        lambda_max=a["lambda_max"],
        check_interval=a["check_interval"],
        learning_rate=a["learning_rate"],
        max_iterations=a["max_iterations"],
        beta1=a["beta1"],
        beta2=a["beta2"],
        epsilon=a["epsilon"],
        clip=a["clip"],
        seed=cfgmod.sub_seed(cfg, "attack"),
        augment=cfgmod.augment_config(cfg),
        threads=threads,
        checkpoint_every=a["checkpoint_every"],
        checkpoint_path=os.path.join(out_dir, "checkpoint.atks") if a["checkpoint_every"] else "",
    )


def _split_rooms(variants, cfg):
    n_gen = cfg["attack"]["generation_rooms"]
    if n_gen < 1 or n_gen > len(variants):
        raise InvalidInputError(
            f"generation_rooms={n_gen} incompatible with {len(variants)} rooms"
        )
    return variants[:n_gen], variants[n_gen:]


def cmd_attack(args, cfg):
    _require_files(args.model, args.rooms, args.carrier)
    model = load_model(args.model)
    _, _, variants = load_rooms(args.rooms)
    gen_rooms, _ = _split_rooms(variants, cfg)
    carrier = read_wav(args.carrier)
    os.makedirs(args.out, exist_ok=True)
    atk_cfg = _attack_config(cfg, args.target, args.threads, args.out)
    rirs = _rirs_for(gen_rooms, cfg, args.threads)
    result = generate_attack(carrier, rirs, model, atk_cfg)
    paths = export_attack(result, args.out)
    history_path = os.path.join(args.out, "history.csv")
    write_history_csv(result.history, history_path)
    aug = cfg["augment"]
    meta = {
        "status": result.status,
        "lambda": result.lam,
        "iterations": result.iterations,
        "seconds": result.seconds,
        "target": args.target,
        "fr": aug["enable_fr"],
        "rs": aug["enable_rooms"],
        "ts": aug["enable_timeshift"],
        "lambda_max": cfg["attack"]["lambda_max"],
        "clipped_samples": paths["clipped_samples"],
    }
    with open(os.path.join(args.out, "attack_meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _summary(
        {
            "command": "attack",
            "out": args.out,
            "status": result.status,
            "lambda": result.lam,
            "iterations": result.iterations,
            "checks": len(result.history),
            "clipped_samples": paths["clipped_samples"],
        }
    )


def cmd_evaluate(args, cfg):
    _require_files(args.model, args.rooms, args.attack)
    model = load_model(args.model)
    _, _, variants = load_rooms(args.rooms)
    _, heldout = _split_rooms(variants, cfg)
    if not heldout:
        raise InvalidInputError("no held-out rooms: lower attack.generation_rooms")
    attack_wave = read_wav(args.attack)
    # evaluation always plays through the full physical chain
    eval_aug = AugmentConfig(
        enable_fr=True,
        enable_rooms=True,
        enable_timeshift=True,
        pad_max=cfg["augment"]["pad_max"],
        seed=cfgmod.sub_seed(cfg, "eval"),
    )
    rirs = _rirs_for(heldout, cfg, args.threads)
    report = evaluate_attack(
        attack_wave, args.target, rirs, model, eval_aug, trials=cfg["eval"]["trials"], threads=args.threads
    )
    gen_time = ""
    flags = (cfg["augment"]["enable_fr"], cfg["augment"]["enable_rooms"], cfg["augment"]["enable_timeshift"])
    lam = cfg["attack"]["lambda_max"]
    if args.meta is not None:
        _require_files(args.meta)
        with open(args.meta) as fh:
            meta = json.load(fh)
        gen_time = meta.get("seconds", "")
        flags = (meta.get("fr", flags[0]), meta.get("rs", flags[1]), meta.get("ts", flags[2]))
        lam = meta.get("lambda_max", lam)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report_to_json(report, flags=flags, lam=lam, generation_time_s=gen_time or None))
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write(report_to_csv(report, flags, lam, gen_time))
    _summary(
        {
            "command": "evaluate",
            "out": args.out,
            "trials": report.trials,
            "success_rate": report.success_rate,
            "per": report.per,
            "wer": report.wer,
        }
    )


def cmd_inspect_mask(args, cfg):
    _require_files(args.carrier)
    carrier = read_wav(args.carrier)
    m = compute_masking_thresholds(stft(carrier))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "mpam.csv")
    with open(path, "w") as fh:
        for row in m.thresholds:
            fh.write(",".join(f"{v:.3f}" for v in row))
            fh.write("\n")
    _summary(
        {
            "command": "inspect-mask",
            "out": path,
            "frames": m.n_frames,
            "bins": m.n_bins,
        }
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="airmask",
        description="Masked, playback-robust adversarial audio at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", default=None, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--out", "-o", default="out", help="output directory")

    p = sub.add_parser("synth-corpus", help="render the synthetic chord corpus")
    common(p)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("train-asr", help="train the toy recognizer on a corpus")
    common(p)
    p.add_argument("--corpus", required=True, help="corpus directory with manifest.json")
    p.set_defaults(func=cmd_train_asr)

    p = sub.add_parser("make-rooms", help="generate jittered room variants")
    common(p)
    p.add_argument("--rir-wav", type=int, default=None, metavar="INDEX",
                   help="also write one room's impulse response as WAV")
    p.set_defaults(func=cmd_make_rooms)

    p = sub.add_parser("channel", help="run one channel pass over a WAV")
    common(p)
    p.add_argument("--rooms", default=None, help="rooms JSON (needed when the room stage is on)")
    p.add_argument("--room-id", type=int, default=0)
    p.add_argument("input", help="input WAV")
    p.add_argument("output", help="output WAV")
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("attack", help="optimize a perturbation for a target transcript")
    common(p)
    p.add_argument("--model", required=True, help="trained recognizer file")
    p.add_argument("--rooms", required=True, help="rooms JSON")
    p.add_argument("--carrier", required=True, help="carrier WAV")
    p.add_argument("--target", required=True, help="target transcript")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="score an attack over held-out simulated rooms")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--rooms", required=True)
    p.add_argument("--attack", required=True, help="attack WAV to evaluate")
    p.add_argument("--target", required=True)
    p.add_argument("--meta", default=None, help="attack_meta.json for table columns")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-mask", help="export the masking-threshold matrix as CSV")
    common(p)
    p.add_argument("carrier", help="carrier WAV")
    p.set_defaults(func=cmd_inspect_mask)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, args.set, args.seed)
        args.func(args, cfg)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except (AirmaskError, ValueError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
