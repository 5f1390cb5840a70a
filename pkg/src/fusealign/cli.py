"""Command-line front end: synth | train | eval | subset | inspect.

Conventions shared by every subcommand:

* the first stdout line is a one-line JSON reproducibility stanza
  (``command``, ``seed``, ``config_hash``, ``version``); any report that
  follows is a separate JSON document,
* commands that write an output directory echo the stanza there as
  ``run.json`` (and ``train`` additionally writes the fully resolved
  settings as ``effective_config.toml``),
* artifacts carry no timestamps, so identical inputs give identical bytes,
* exit status is 0 on success, 2 for usage errors (argparse), and 1 for
  runtime failures, which print a single ``error: ...`` line to stderr.

Settings resolve in precedence order: built-in defaults, then the TOML
config file (``--config``), then explicit flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import adapter as ad
from . import config as cfgmod
from . import diversity as dv
from . import retrieval as rt
from . import store as st
from . import trainer as tr
from .augment import SCHEMES
from .store import StoreError
from .trainer import TrainError

# desk-scale defaults for keys TrainConfig does not default itself
DEFAULT_BATCH_B = 256
DEFAULT_EPOCHS = 30

# flag destination -> (config table, key) for single-key train overrides
_OVERRIDES = {
    "batch_b": ("train", "batch_b"),
    "epochs": ("train", "epochs"),
    "seed": ("train", "seed"),
    "checkpoint_every": ("train", "checkpoint_every"),
    "eval_every": ("train", "eval_every"),
    "lr": ("optim", "lr"),
    "weight_decay": ("optim", "weight_decay"),
    "warmup_steps": ("optim", "warmup_steps"),
    "final_lr": ("optim", "final_lr"),
    "scheme": ("augment", "scheme"),
    "alpha": ("augment", "alpha"),
    "sigma": ("augment", "sigma"),
}

# flags that apply to both adapters at once
_ADAPTER_OVERRIDES = {
    "depth": "depth",
    "shared_dim": "shared_dim",
    "expansion": "expansion_factor",
    "dropout": "dropout_p",
}


def _hash_json(text: str) -> str:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


def _stanza(command: str, seed, config_hash: str) -> dict:
    return {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "version": __version__,
    }


def _emit_stanza(stanza: dict) -> None:
    print(json.dumps(stanza, sort_keys=True), flush=True)


def _write_run_record(out_dir: Path, stanza: dict, params: dict) -> None:
    record = dict(stanza)
    record["params"] = params
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    (out_dir / "run.json").write_text(text, encoding="utf-8")


def _print_report(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from None
    if not ks:
        raise argparse.ArgumentTypeError("at least one cutoff is required")
    return ks


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    rows_x, rows_y = st.synth_aligned(args.n, args.dx, args.dy, args.latent,
                                      args.noise, args.seed)
    params = {
        "n": args.n, "dx": args.dx, "dy": args.dy, "latent": args.latent,
        "noise": args.noise, "seed": args.seed,
        "tag_x": args.tag_x, "tag_y": args.tag_y,
    }
    stanza = _stanza("synth", args.seed, _hash_json(json.dumps(params, sort_keys=True)))
    _emit_stanza(stanza)
    out_dir = Path(args.out)
    manifest = st.write_store(rows_x, rows_y, (args.tag_x, args.tag_y), out_dir)
    _write_run_record(out_dir, stanza, params)
    _print_report({
        "count": manifest.count,
        "manifest": str(out_dir / st.MANIFEST),
        "checksum_x": manifest.checksum_x,
        "checksum_y": manifest.checksum_y,
    })
    return 0


# ---------------------------------------------------------------------------
# train


def _base_config_dict(store: st.StoreHandle, preset_name) -> dict:
    if preset_name is not None:
        base = tr.preset(preset_name, store.dim_x, store.dim_y)
        return tr.config_to_dict(base)
    base = tr.TrainConfig(
        batch_b=DEFAULT_BATCH_B, epochs=DEFAULT_EPOCHS, seed=0,
        adapter_x=ad.AdapterConfig(input_dim=store.dim_x),
        adapter_y=ad.AdapterConfig(input_dim=store.dim_y),
    )
    return tr.config_to_dict(base)


def _resolve_train_config(args, store: st.StoreHandle) -> tr.TrainConfig:
    doc = _base_config_dict(store, args.preset)
    if args.config is not None:
        doc = cfgmod.merge(doc, cfgmod.load_config_file(args.config))
    for dest, (table, key) in _OVERRIDES.items():
        value = getattr(args, dest)
        if value is not None:
            doc.setdefault(table, {})[key] = value
    for dest, key in _ADAPTER_OVERRIDES.items():
        value = getattr(args, dest)
        if value is not None:
            doc["adapter_x"][key] = value
            doc["adapter_y"][key] = value
    # the store is authoritative for input widths unless the file pinned them
    doc["adapter_x"].setdefault("input_dim", store.dim_x)
    doc["adapter_y"].setdefault("input_dim", store.dim_y)
    return tr.config_from_dict(doc)


def _cmd_train(args) -> int:
    store = st.open_store(args.manifest)
    heldout = st.open_store(args.heldout) if args.heldout else None
    config = _resolve_train_config(args, store)
    stanza = _stanza("train", config.seed, _hash_json(tr.config_json(config)))
    _emit_stanza(stanza)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = tr.config_to_dict(config)
    (out_dir / "effective_config.toml").write_text(cfgmod.dump_toml(doc),
                                                   encoding="utf-8")
    _write_run_record(out_dir, stanza, {"manifest": str(args.manifest)})

    final = tr.train(store, config, heldout=heldout,
                     metrics_path=out_dir / "metrics.ndjson",
                     checkpoint_dir=out_dir)
    _print_report({
        "checkpoint": str(out_dir / "checkpoint_final.fxck"),
        "epochs": final.epoch,
        "steps": final.step,
        "final_epoch_loss": final.epoch_losses[-1],
    })
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    ckpt = tr.load_checkpoint(args.checkpoint)
    cid = tr.checkpoint_id(args.checkpoint)
    stanza = _stanza("eval", ckpt.config.seed, _hash_json(tr.config_json(ckpt.config)))
    _emit_stanza(stanza)
    store = st.open_store(args.manifest)
    z_x, z_y = store.read_all()
    reports = rt.evaluate_pair(ckpt.params_x, ckpt.config.adapter_x,
                               ckpt.params_y, ckpt.config.adapter_y,
                               z_x, z_y, ks=args.ks)
    doc = {
        "checkpoint_id": cid,
        "n_pairs": store.count,
        "x_to_y": rt.report_to_dict(reports["x_to_y"], checkpoint_id=cid),
        "y_to_x": rt.report_to_dict(reports["y_to_x"], checkpoint_id=cid),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# subset


def _cmd_subset(args) -> int:
    store = st.open_store(args.manifest)
    params = {
        "mode": args.mode, "kernel": args.kernel, "k": args.k,
        "side": args.side, "seed": args.seed if args.mode == "uniform" else None,
    }
    stanza = _stanza("subset", params["seed"],
                     _hash_json(json.dumps(params, sort_keys=True)))
    _emit_stanza(stanza)
    if args.mode == "uniform":
        indices = dv.uniform_subset(store.count, args.k, args.seed)
        gains = None
    else:
        latents = store.read_all()[0 if args.side == "x" else 1]
        kernel = dv.build_kernel(latents, dv.KernelSpec(kind=args.kernel))
        result = dv.greedy_kdpp(kernel, args.k)
        indices, gains = result.indices, result.gains
    out_dir = Path(args.out)
    manifest = dv.subset_store(store, indices, out_dir)
    _write_run_record(out_dir, stanza, params)
    doc = {
        "selected": int(indices.size),
        "requested": args.k,
        "manifest": str(out_dir / st.MANIFEST),
        "checksum_x": manifest.checksum_x,
        "checksum_y": manifest.checksum_y,
    }
    if gains is not None:
        doc["total_log_det"] = float(np.sum(gains))
    _print_report(doc)
    return 0


# ---------------------------------------------------------------------------
# inspect


def _cmd_inspect(args) -> int:
    store = st.open_store(args.manifest)
    doc = {
        "count": store.count,
        "dim_x": store.dim_x,
        "dim_y": store.dim_y,
        "tag_x": store.tag_x,
        "tag_y": store.tag_y,
        "path_x": store.manifest.path_x,
        "path_y": store.manifest.path_y,
        "checksum_x": store.manifest.checksum_x,
        "checksum_y": store.manifest.checksum_y,
    }
    stanza = _stanza("inspect", None,
                     _hash_json(json.dumps(doc, sort_keys=True)))
    _emit_stanza(stanza)
    _print_report(doc)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusealign",
        description="Train and evaluate latent-space fusion adapters.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate an aligned synthetic latent store")
    p.add_argument("--n", type=int, required=True, help="number of pairs")
    p.add_argument("--dx", type=int, required=True, help="modality-X width")
    p.add_argument("--dy", type=int, required=True, help="modality-Y width")
    p.add_argument("--latent", type=int, required=True,
                   help="shared latent dimension of the generator")
    p.add_argument("--noise", type=float, default=0.0,
                   help="noise level applied to modality Y")
    p.add_argument("--out", required=True, help="output store directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag-x", default="synth-x", help="encoder tag for X")
    p.add_argument("--tag-y", default="synth-y", help="encoder tag for Y")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train adapters on a paired latent store")
    p.add_argument("--manifest", required=True, help="training store manifest")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", default=None, help="TOML settings file")
    p.add_argument("--preset", choices=("image_text", "audio_text"),
                   default=None, help="start from a reference hyperparameter set")
    p.add_argument("--heldout", default=None,
                   help="manifest for periodic retrieval evaluation")
    p.add_argument("--batch-b", dest="batch_b", type=int, default=None,
                   help="output pairs per step (each step consumes twice this)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, help="peak learning rate")
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int, default=None)
    p.add_argument("--final-lr", dest="final_lr", type=float, default=None)
    p.add_argument("--scheme", choices=SCHEMES, default=None,
                   help="latent augmentation scheme")
    p.add_argument("--alpha", type=float, default=None,
                   help="mixing concentration for the fusemix scheme")
    p.add_argument("--sigma", type=float, default=None,
                   help="noise level for the gaussian scheme")
    p.add_argument("--depth", type=int, default=None,
                   help="residual blocks in both adapters")
    p.add_argument("--shared-dim", dest="shared_dim", type=int, default=None,
                   help="width of the shared embedding space")
    p.add_argument("--expansion", type=int, default=None,
                   help="hidden expansion factor of both adapters")
    p.add_argument("--dropout", type=float, default=None,
                   help="dropout probability in both adapters")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                   default=None, help="epochs between checkpoint snapshots")
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None,
                   help="epochs between held-out evaluations")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="cross-modal retrieval from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="evaluation store manifest")
    p.add_argument("--ks", type=_parse_ks, default=(1, 5, 10),
                   help="comma-separated recall cutoffs (default 1,5,10)")
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("subset", help="select a pair subset and write a new store")
    p.add_argument("--manifest", required=True, help="source store manifest")
    p.add_argument("--out", required=True, help="output store directory")
    p.add_argument("--k", type=int, required=True, help="subset size")
    p.add_argument("--mode", choices=("dpp", "uniform"), default="dpp")
    p.add_argument("--kernel", choices=dv.KERNEL_KINDS, default="linear",
                   help="similarity kernel for dpp mode")
    p.add_argument("--side", choices=("x", "y"), default="y",
                   help="modality whose latents define similarity")
    p.add_argument("--seed", type=int, default=0, help="seed for uniform mode")
    p.set_defaults(func=_cmd_subset)

    p = sub.add_parser("inspect", help="validate a store and print its facts")
    p.add_argument("--manifest", required=True, help="store manifest")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StoreError, TrainError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
