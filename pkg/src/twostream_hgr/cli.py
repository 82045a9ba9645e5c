"""Command-line entry point: ``twostream-hgr {synth,train,eval,export-attention}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import (
    SEQ_LEN,
    SplitProtocol,
    build_split,
    load_class_names,
    load_dataset,
    load_sequence,
    make_batch,
    save_dataset,
)
from .sagcn import SagcnNetwork
from .skeleton import build_hand_topology, export_matrix_csv
from .synthetic import SyntheticSpec, generate_synthetic
from .tensor import load_checkpoint, no_grad
from .training import (
    build_model,
    evaluate,
    load_model,
    read_key_values,
    stream_inputs,
    train_config_from_mapping,
    train_stream,
)

log = logging.getLogger("twostream_hgr")

SYNTH_KEYS = {
    "classes": str, "noise": float, "samples_per_class": int, "seed": int,
    "min_frames": int, "max_frames": int, "test_fraction": float, "topology": str,
}


def synth_spec_from_mapping(values: dict[str, str]) -> tuple[SyntheticSpec, float, str]:
    """Split a synth key-value file into a generator spec, test fraction and topology."""
    unknown = set(values) - set(SYNTH_KEYS)
    if unknown:
        raise ValueError(f"unknown synth keys {sorted(unknown)}")
    kwargs = {k: SYNTH_KEYS[k](v) for k, v in values.items() if k not in ("test_fraction", "topology", "classes")}
    if "classes" in values:
        kwargs["classes"] = tuple(values["classes"].replace(",", " ").split())
    spec = SyntheticSpec(**kwargs)
    return spec, float(values.get("test_fraction", 0.2)), values.get("topology", "DHG22")


def _cmd_synth(args) -> int:
    spec, test_fraction, topo_name = synth_spec_from_mapping(read_key_values(args.spec) if args.spec else {})
    topology = build_hand_topology(topo_name)
    seqs = generate_synthetic(spec, topology)
    split = build_split([s.label for s in seqs], SplitProtocol("synthetic_random", spec.seed, test_fraction))
    save_dataset(args.out, {k: [seqs[i] for i in v] for k, v in split.items()}, spec.classes)
    print(f"wrote {len(seqs)} sequences to {args.out} "
          f"(train {len(split['train'])}, val {len(split['val'])}, test {len(split['test'])})")
    return 0


def _batches(root, topology, center_wrist: bool):
    seqs = load_dataset(root)
    return {k: make_batch(v, topology, SEQ_LEN, center_wrist) for k, v in seqs.items() if v}


def _cmd_train(args) -> int:
    values = read_key_values(args.config) if args.config else {}
    config = train_config_from_mapping(values, stream=args.stream, seed=args.seed)
    topology = build_hand_topology(config.topology)
    data = _batches(args.data_root, topology, config.center_wrist)
    if "train" not in data:
        raise SystemExit(f"{args.data_root}: no training sequences")
    labels = np.concatenate([b.labels for b in data.values()])
    model = build_model(config, int(labels.max()) + 1, topology.joint_count)

    def progress(r):
        log.info("epoch %d loss %.6f train_acc %.4f val_acc %.4f lr %.3g",
                 r.epoch, r.loss, r.train_acc, r.val_acc, r.lr)

    model, history = train_stream(model, data, config, progress)
    out = Path(args.out)
    model.save(out, {"topology": config.topology, "center_wrist": str(config.center_wrist)})
    history_path = Path(args.history) if args.history else out.with_suffix(".history.csv")
    history.to_csv(history_path)
    print(f"saved {config.stream} checkpoint to {out} (best epoch {history.best_epoch}); history in {history_path}")
    return 0


def _checkpoint_context(path) -> tuple[str, bool]:
    _, meta = load_checkpoint(path)
    return meta.get("topology", "DHG22"), meta.get("center_wrist", "False") == "True"


def _cmd_eval(args) -> int:
    if args.fuse and len(args.checkpoint) != 2:
        raise SystemExit("--fuse needs exactly two checkpoints")
    if not args.fuse and len(args.checkpoint) != 1:
        raise SystemExit("give one checkpoint, or two with --fuse")
    models = [load_model(p) for p in args.checkpoint]
    contexts = {_checkpoint_context(p) for p in args.checkpoint}
    if len(contexts) != 1:
        raise SystemExit("checkpoints were trained with different topologies or centering")
    topo_name, center_wrist = contexts.pop()
    topology = build_hand_topology(topo_name)
    test = make_batch(load_dataset(args.data_root)[args.split], topology, SEQ_LEN, center_wrist)
    report = evaluate(models, test)
    names = load_class_names(args.data_root, report.confusion.shape[0])
    if args.report:
        report.confusion_csv(args.report, names)
    if args.scores:
        report.scores_csv(args.scores)
    print(f"accuracy {report.accuracy!r} on {len(test)} {args.split} sequences")
    return 0


def _cmd_export_attention(args) -> int:
    model = load_model(args.checkpoint)
    if not isinstance(model, SagcnNetwork):
        raise SystemExit("attention maps exist only for sagcn checkpoints")
    topo_name, center_wrist = _checkpoint_context(args.checkpoint)
    batch = make_batch([load_sequence(args.sequence)], build_hand_topology(topo_name), SEQ_LEN, center_wrist)
    sink: list = []
    with no_grad():
        model.logits(stream_inputs(model, batch), mode="infer", attention_sink=sink)
    if not 1 <= args.unit <= len(sink):
        raise SystemExit(f"--unit must lie in 1..{len(sink)}")
    export_matrix_csv(args.out, sink[args.unit - 1][0])
    print(f"wrote unit {args.unit} attention map to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostream-hgr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gesture dataset")
    p.add_argument("--spec", help="key-value file (classes, noise, samples_per_class, seed, ...)")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one stream")
    p.add_argument("--stream", choices=("sagcn", "rbi"))
    p.add_argument("--data-root", required=True)
    p.add_argument("--config", help="key-value file mirroring TrainConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history CSV path (default: next to the checkpoint)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate one stream or a fused pair")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--fuse", action="store_true", help="multiply the two streams' scores")
    p.add_argument("--data-root", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--report", help="confusion matrix CSV")
    p.add_argument("--scores", help="per-sequence score CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-attention", help="write one unit's attention map as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True, help=".skl file")
    p.add_argument("--unit", type=int, default=1, help="1-based unit index")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_attention)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
