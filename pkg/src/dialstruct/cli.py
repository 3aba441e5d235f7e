"""Command-line surface binding corpora, training, baselines, and metrics.

Every artifact-producing command writes a run manifest next to its output:
the resolved configuration, seed, SHA-256 digests of the input files, tool
and format versions, and a timestamp.  Re-running a command with the same
inputs and seed reproduces the data artifacts bitwise (the manifest itself
carries the timestamp, so it is the one file excluded from that promise).

A JSON config file may pre-fill any flag of any subcommand; flags given on
the command line win.  The file maps subcommand names to flag dictionaries,
with underscores for dashes: ``{"train": {"n_state": 8, "epochs": 30}}``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__ as TOOL_VERSION
from .baselines import hmm_baseline, kmeans_baseline
from .corpus import (
    Dialogue,
    get_structure,
    generate_synthetic,
    load_corpus,
    load_structure,
    save_corpus,
)
from .errors import (
    CapacityError,
    ConsistencyError,
    CorpusParseError,
    InputError,
    NumericError,
    ParameterError,
    ShapeError,
)
from .evaluation import (
    TransitionMatrix,
    estimate_transition,
    evaluate,
    export_dot,
    extract_structure,
    load_state_sequences,
    state_occupancy,
    write_state_sequences,
)
from .model import CHECKPOINT_VERSION, DialogueStateModel, ModelConfig, TauSchedule
from .tensor import RngState
from .text import fit_tfidf
from .training import TrainConfig, predict_states, train

_USER_ERRORS = (
    CapacityError,
    ConsistencyError,
    CorpusParseError,
    InputError,
    NumericError,
    ParameterError,
    ShapeError,
    OSError,
)


def _note(message: str) -> None:
    print(message, file=sys.stderr)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(artifact_path, command: str, config: dict,
                    seed: Optional[int], inputs: Dict[str, str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)}
            for name, p in inputs.items()
        },
        "tool_version": TOOL_VERSION,
        "format_versions": {"checkpoint": CHECKPOINT_VERSION},
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(str(artifact_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                    encoding="utf-8")


def _resolve_structure(name_or_path: str):
    """A structure argument is a JSON file path if one exists, else a name."""
    if Path(name_or_path).exists():
        return load_structure(name_or_path)
    return get_structure(name_or_path)


def _gold_sequences(dialogues: Sequence[Dialogue]) -> List[List[int]]:
    if not all(d.labeled for d in dialogues):
        raise InputError(
            "evaluation needs a labeled corpus (every pair carries a state)"
        )
    return [d.gold_states() for d in dialogues]


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def cmd_generate(args) -> int:
    structure = _resolve_structure(args.structure)
    corpus = generate_synthetic(
        structure, args.n, min_turns=args.min_turns, max_turns=args.max_turns,
        rng=RngState(args.seed),
    )
    save_corpus(corpus, args.out)
    inputs = {"structure": args.structure} if Path(args.structure).exists() else {}
    _write_manifest(args.out, "generate", {
        "structure": args.structure, "n": args.n, "min_turns": args.min_turns,
        "max_turns": args.max_turns,
    }, args.seed, inputs)
    _note(f"wrote {len(corpus)} dialogues to {args.out}")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "model.ckpt.json"
    log_path = out_dir / "train_log.jsonl"

    tau = None
    if args.tau_start is not None or args.tau_end is not None:
        tau = TauSchedule(start=args.tau_start if args.tau_start is not None
                          else 1.0,
                          end=args.tau_end if args.tau_end is not None
                          else 0.5)
    model_config = ModelConfig(
        vocab_size=0,  # the trainer sizes it from the corpus vocabulary
        n_state=args.n_state,
        d_model=args.d_model,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        max_seq_len=args.max_seq_len,
        max_pairs=args.max_pairs,
        pair_attn_bias=args.pair_attn_bias,
    )
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        loss=args.loss,
        balance_weight=args.balance_weight,
        e_greedy=args.e_greedy,
        after_greedy=args.after_greedy,
        learning_rate=args.learning_rate,
        tau=tau,
        e_keywords=args.e_keywords,
        n_keywords=args.n_keywords,
        seed=args.seed,
        checkpoint_path=str(checkpoint),
        log_path=str(log_path),
        eval_every=args.eval_every,
    )
    result = train(corpus, train_config, model_config)
    result.model.save(checkpoint)  # present even when no epoch improved
    config_snapshot = {
        "model": asdict(result.model.config),
        "train": {k: (v.name.lower() if hasattr(v, "name") else v)
                  for k, v in asdict(train_config).items()},
    }
    _write_manifest(checkpoint, "train", config_snapshot, args.seed,
                    {"corpus": args.corpus})
    if result.best_epoch is not None:
        _note(f"trained {train_config.epochs} epochs; best epoch "
              f"{result.best_epoch} (metric {result.best_metric:.6f})")
    else:
        _note(f"trained {train_config.epochs} epochs")
    _note(f"wrote {checkpoint} and {log_path}")
    return 0


def _load_predictions(pred_path: str, corpus: Sequence[Dialogue],
                      n_pred_flag: Optional[int]
                      ) -> Tuple[List[List[int]], int]:
    """Accept a model checkpoint or a baseline state-sequence file."""
    text = Path(pred_path).read_text(encoding="utf-8")
    is_checkpoint = False
    try:
        obj = json.loads(text)
        is_checkpoint = isinstance(obj, dict) and "params" in obj
    except json.JSONDecodeError:
        pass
    if is_checkpoint:
        model = DialogueStateModel.load(pred_path)
        result = predict_states(model, corpus)
        if result.errors:
            failures = "; ".join(f"{did}: {msg}" for did, msg in result.errors)
            raise InputError(f"prediction failed for {failures}")
        return [list(seq) for seq in result.sequences], model.config.n_state

    items = dict(load_state_sequences(pred_path))
    sequences = []
    for d in corpus:
        if d.id not in items:
            raise InputError(f"states file has no entry for dialogue {d.id!r}")
        sequences.append(items[d.id])
    n_pred = n_pred_flag if n_pred_flag is not None else (
        1 + max((s for seq in sequences for s in seq), default=0))
    return sequences, n_pred


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    golds = _gold_sequences(corpus)
    n_true = args.n_true if args.n_true is not None else (
        1 + max(s for seq in golds for s in seq))
    sequences, n_pred = _load_predictions(args.pred, corpus, args.n_pred)
    report = evaluate(golds, sequences, n_true, n_pred)
    Path(args.out).write_text(
        json.dumps(report.to_dict(include_matrices=True), indent=1,
                   sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _write_manifest(args.out, "eval", {"n_true": n_true, "n_pred": n_pred},
                    None, {"corpus": args.corpus, "pred": args.pred})
    _note(f"sed {report.sed:.6f} sce {report.sce:.6f} -> {args.out}")
    return 0


def cmd_baseline(args) -> int:
    corpus = load_corpus(args.corpus)
    texts = [t for d in corpus for p in d.pairs
             for t in (p.system_text, p.user_text)]
    tfidf = fit_tfidf(texts)
    rng = RngState(args.seed)
    if args.method == "kmeans":
        sequences = kmeans_baseline(corpus, tfidf, args.k, rng=rng)
        config = {"method": "kmeans", "k": args.k}
    else:
        sequences = hmm_baseline(corpus, tfidf, args.n_hidden, args.n_symbols,
                                 rng=rng, n_restarts=args.n_restarts)
        config = {"method": "hmm", "n_hidden": args.n_hidden,
                  "n_symbols": args.n_symbols, "n_restarts": args.n_restarts}
    write_state_sequences(args.out,
                          [(d.id, seq) for d, seq in zip(corpus, sequences)])
    _write_manifest(args.out, "baseline", config, args.seed,
                    {"corpus": args.corpus})
    _note(f"wrote {args.method} states for {len(corpus)} dialogues to {args.out}")
    return 0


def cmd_extract(args) -> int:
    if (args.pred is None) == (args.structure is None):
        raise ParameterError("give exactly one of --pred or --structure")
    if args.pred is not None:
        items = load_state_sequences(args.pred)
        sequences = [states for _, states in items]
        n = args.n_states if args.n_states is not None else (
            1 + max((s for seq in sequences for s in seq), default=0))
        t = estimate_transition(sequences, n)
        occupancy = state_occupancy(sequences, n)
        graph = extract_structure(t, threshold=args.threshold,
                                  occupancy=occupancy)
        inputs = {"pred": args.pred}
        config = {"source": "states", "n_states": n,
                  "threshold": args.threshold}
    else:
        structure = _resolve_structure(args.structure)
        t = TransitionMatrix(probs=structure.trans,
                             counts=np.zeros_like(structure.trans))
        graph = extract_structure(t, labels=structure.states,
                                  threshold=args.threshold)
        inputs = ({"structure": args.structure}
                  if Path(args.structure).exists() else {})
        config = {"source": "structure", "structure": args.structure,
                  "threshold": args.threshold}
    Path(args.dot_out).write_text(export_dot(graph), encoding="utf-8")
    _write_manifest(args.dot_out, "extract", config, None, inputs)
    _note(f"wrote {len(graph.nodes)} nodes / {len(graph.edges)} edges "
          f"to {args.dot_out}")
    return 0


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------


def _build_parser(config: Dict[str, dict]) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialstruct",
        description="Unsupervised dialogue structure learning toolkit.",
    )
    parser.add_argument("--version", action="version",
                        version=f"dialstruct {TOOL_VERSION} "
                                f"(checkpoint format {CHECKPOINT_VERSION})")
    parser.add_argument("--config", default=None, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def apply_config(p: argparse.ArgumentParser, name: str) -> None:
        section = config.get(name, {})
        if not isinstance(section, dict):
            raise ParameterError(f"config section {name!r} must be an object")
        known = {a.dest for a in p._actions}
        unknown = set(section) - known
        if unknown:
            raise ParameterError(
                f"config section {name!r} has unknown keys: "
                f"{', '.join(sorted(unknown))}"
            )
        p.set_defaults(**section)

    g = sub.add_parser("generate", help="sample a labeled synthetic corpus")
    g.add_argument("--structure", required=True,
                   help="built-in name (bus, weather, chain-<k>) or JSON file")
    g.add_argument("--n", type=int, required=True, help="number of dialogues")
    g.add_argument("--min-turns", type=int, default=6)
    g.add_argument("--max-turns", type=int, default=13)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="corpus JSON path to write")
    apply_config(g, "generate")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the latent-state model")
    t.add_argument("--corpus", required=True)
    t.add_argument("--loss", choices=["balance_kl", "greedy", "top", "none"],
                   default="balance_kl")
    t.add_argument("--lambda", dest="balance_weight", type=float, default=None,
                   help="balance-loss weight (default: model config's value)")
    t.add_argument("--n-state", type=int, required=True)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--learning-rate", type=float, default=3e-4)
    t.add_argument("--e-greedy", type=int, default=5,
                   help="epochs of Greedy Balance when --loss greedy")
    t.add_argument("--after-greedy", choices=["none", "balance_kl", "top"],
                   default="none",
                   help="balance loss applied after the greedy warm-up")
    t.add_argument("--e-keywords", type=int, default=3,
                   help="epochs with keyword-augmented encoder input")
    t.add_argument("--n-keywords", type=int, default=3)
    t.add_argument("--eval-every", type=int, default=1)
    t.add_argument("--tau-start", type=float, default=None)
    t.add_argument("--tau-end", type=float, default=None)
    t.add_argument("--d-model", type=int, default=64)
    t.add_argument("--n-layers", type=int, default=2)
    t.add_argument("--n-heads", type=int, default=2)
    t.add_argument("--max-seq-len", type=int, default=256)
    t.add_argument("--max-pairs", type=int, default=16)
    t.add_argument("--pair-attn-bias", type=float, default=4.0)
    apply_config(t, "train")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score predictions against gold labels")
    e.add_argument("--corpus", required=True, help="labeled corpus JSON")
    e.add_argument("--pred", required=True,
                   help="model checkpoint or JSONL state-sequence file")
    e.add_argument("--n-true", type=int, default=None,
                   help="gold state count (default: inferred from labels)")
    e.add_argument("--n-pred", type=int, default=None,
                   help="predicted state count (default: checkpoint config "
                        "or inferred)")
    e.add_argument("--out", required=True, help="report JSON path")
    apply_config(e, "eval")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="run a clustering baseline")
    b.add_argument("--corpus", required=True)
    b.add_argument("--method", choices=["kmeans", "hmm"], required=True)
    b.add_argument("--k", type=int, default=None,
                   help="clusters for kmeans")
    b.add_argument("--n-hidden", type=int, default=None,
                   help="hidden states for hmm")
    b.add_argument("--n-symbols", type=int, default=16,
                   help="vector-quantization alphabet size for hmm")
    b.add_argument("--n-restarts", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="JSONL states path")
    apply_config(b, "baseline")
    b.set_defaults(func=cmd_baseline)

    x = sub.add_parser("extract", help="export a structure graph as DOT")
    x.add_argument("--pred", default=None,
                   help="JSONL state-sequence file to estimate from")
    x.add_argument("--structure", default=None,
                   help="built-in name or JSON file with gold transitions")
    x.add_argument("--n-states", type=int, default=None)
    x.add_argument("--threshold", type=float, default=0.0,
                   help="drop edges with probability below this")
    x.add_argument("--dot-out", required=True)
    apply_config(x, "extract")
    x.set_defaults(func=cmd_extract)

    return parser


def _load_config_file(argv: Sequence[str]) -> Dict[str, dict]:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config is None:
        return {}
    try:
        config = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusParseError(f"{known.config}: not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ParameterError("config file must hold a JSON object")
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = _load_config_file(argv)
        parser = _build_parser(config)
        args = parser.parse_args(argv)
        missing = []
        if args.command == "baseline":
            if args.method == "kmeans" and args.k is None:
                missing.append("--k")
            if args.method == "hmm" and args.n_hidden is None:
                missing.append("--n-hidden")
        if missing:
            parser.error(f"method requires {', '.join(missing)}")
        return args.func(args)
    except _USER_ERRORS as exc:
        _note(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
