"""Command-line surface: extraction, prompting, training, evaluation.

Every subcommand is a batch job; all randomness flows from --seed, so a
command run twice with the same arguments produces identical bytes. Exit
codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from . import model as model_mod
from . import reporting
from .acoustics import compute_profile, load_wav
from .errors import AffectClapError, NonFiniteLogits, NonFiniteLoss
from .featurizers import FeaturizerConfig
from .prompting import POLICY_NAMES, PromptPolicy

_RUNTIME_ERRORS = (NonFiniteLoss, NonFiniteLogits)


def _policy_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--prompts", default="augment", choices=POLICY_NAMES,
        help="prompt policy: a single prompt kind or 'augment' for all five",
    )
    parser.add_argument(
        "--no-sex-aware", action="store_true",
        help="ignore manifest sex and always use the sex-agnostic "
        "pitch cutoff",
    )


def _train_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--lr", type=float, default=0.0001)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--embed-dim", type=int, default=32)


def _load_datasets(manifests: list[str], root: str | None,
                   cfg: FeaturizerConfig):
    """Parse + prepare every manifest, grouped by dataset name."""
    datasets: dict[str, list] = {}
    seen_ids: set[str] = set()
    for manifest in manifests:
        records = corpus_mod.parse_manifest(manifest)
        for rec in records:
            if rec.clip_id in seen_ids:
                raise corpus_mod.DuplicateClipId(
                    f"clip_id {rec.clip_id!r} appears in multiple manifests"
                )
            seen_ids.add(rec.clip_id)
        base = Path(root) if root else Path(manifest).parent
        for clip in corpus_mod.prepare_clips(records, base, cfg):
            datasets.setdefault(clip.dataset, []).append(clip)
    return datasets


def _policy_from_args(args) -> PromptPolicy:
    return PromptPolicy.parse(args.prompts,
                              sex_aware_pitch=not args.no_sex_aware)


def _model_config(cfg: FeaturizerConfig, embed_dim: int):
    return model_mod.ModelConfig(
        audio_dim=cfg.audio_dim, text_dim=cfg.text_dim,
        embed_dim=embed_dim, featurizer_hash=cfg.config_hash(),
    )


# -- subcommands -------------------------------------------------------------

def _cmd_extract(args) -> int:
    records = corpus_mod.parse_manifest(args.manifest)
    root = Path(args.root) if args.root else Path(args.manifest).parent
    cfg = FeaturizerConfig()
    profiles = {}
    for rec in records:
        clip = load_wav(root / rec.audio_path)
        profiles[rec.clip_id] = compute_profile(clip, cfg.profile)
    corpus_mod.profiles_to_jsonl(profiles, args.out)
    print(f"wrote {len(profiles)} profiles to {args.out}")
    return 0


def _cmd_prompt(args) -> int:
    records = corpus_mod.parse_manifest(args.manifest)
    profiles = corpus_mod.profiles_from_jsonl(args.profiles)
    policy = _policy_from_args(args)
    from .prompting import augment_pairs
    lines = []
    for rec in records:
        if rec.clip_id not in profiles:
            raise AffectClapError(
                f"no profile for clip {rec.clip_id!r} in {args.profiles}"
            )
        for clip_id, prompt in augment_pairs(
            rec.clip_id, profiles[rec.clip_id], rec.emotion, rec.sex, policy
        ):
            lines.append(json.dumps(
                {"clip_id": clip_id, "kind": prompt.kind.value,
                 "text": prompt.text},
                sort_keys=True,
            ))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} pairs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = FeaturizerConfig()
    datasets = _load_datasets(args.manifests, args.root, cfg)
    clips = [c for _, cs in sorted(datasets.items()) for c in cs
             if args.split == "all" or c.split == args.split]
    pairs = corpus_mod.build_training_pairs(clips, _policy_from_args(args),
                                            cfg=cfg)
    train_cfg = model_mod.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size,
        epochs=args.epochs, seed=args.seed,
    )
    init = model_mod.init_model(_model_config(cfg, args.embed_dim),
                                args.seed)
    trained, history = model_mod.train(pairs, train_cfg, init)
    model_mod.save_checkpoint(trained, args.out)
    if args.history:
        Path(args.history).write_text(model_mod.history_to_csv(history),
                                      encoding="utf-8")
    final = history[-1].loss if history else float("nan")
    print(f"trained on {len(pairs)} pairs for {args.epochs} epochs; "
          f"final batch loss {final:.4f}; checkpoint at {args.out}")
    return 0


def _cmd_eval_zeroshot(args) -> int:
    cfg = FeaturizerConfig()
    model = model_mod.load_checkpoint(args.checkpoint, cfg.config_hash())
    datasets = _load_datasets([args.manifest], args.root, cfg)
    clips = [c for _, cs in sorted(datasets.items()) for c in cs
             if args.split == "all" or c.split == args.split]
    candidates = sorted({c.emotion for c in clips})
    report, _ = eval_mod.zero_shot_classify(model, clips, candidates,
                                            args.template, cfg)
    report.save(args.out)
    print(f"zero-shot accuracy {report.accuracy:.4f} over {len(clips)} "
          f"clips; report at {args.out}")
    return 0


def _cmd_eval_loo(args) -> int:
    cfg = FeaturizerConfig()
    datasets = _load_datasets(args.manifests, args.root, cfg)
    train_cfg = model_mod.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size,
        epochs=args.epochs, seed=args.seed,
    )
    model, report = eval_mod.leave_one_out_run(
        datasets, args.hold_out, _policy_from_args(args), train_cfg, cfg,
        embed_dim=args.embed_dim, template=args.template,
    )
    report.save(args.out)
    if args.checkpoint_out:
        model_mod.save_checkpoint(model, args.checkpoint_out)
    print(f"leave-one-out ({args.hold_out}) accuracy "
          f"{report.accuracy:.4f}; report at {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = FeaturizerConfig()
    model = model_mod.load_checkpoint(args.checkpoint, cfg.config_hash())
    datasets = _load_datasets([args.manifest], args.root, cfg)
    clips = [c for _, cs in sorted(datasets.items()) for c in cs]
    train_clips = [c for c in clips if c.split == "train"]
    test_clips = [c for c in clips if c.split == "test"]
    head_cfg = eval_mod.HeadConfig(epochs=args.head_epochs,
                                   learning_rate=args.head_lr,
                                   seed=args.seed)
    head = eval_mod.finetune_head(model, train_clips, head_cfg, cfg=cfg)
    report = eval_mod.finetune_classify(model, head, test_clips, cfg)
    report.save(args.out)
    print(f"finetune accuracy {report.accuracy:.4f} over "
          f"{len(test_clips)} test clips; report at {args.out}")
    return 0


def _cmd_retrieve(args) -> int:
    cfg = FeaturizerConfig()
    model = model_mod.load_checkpoint(args.checkpoint, cfg.config_hash())
    datasets = _load_datasets([args.manifest], args.root, cfg)
    clips = [c for _, cs in sorted(datasets.items()) for c in cs]
    result = eval_mod.retrieve_top_k(model, clips, args.query, args.k, cfg)
    ground_truth = {c.clip_id: c for c in clips}
    precision = eval_mod.precision_at_k(result, result.query, ground_truth)
    for rank, (clip_id, score) in enumerate(result.ranked, start=1):
        print(f"{rank:3d}. {clip_id}  cosine={score:.4f}")
    print(f"precision@{result.k} = {precision:.4f}")
    if args.out:
        doc = {
            "query": result.query.text,
            "k": result.k,
            "ranked": [{"clip_id": cid, "cosine": s}
                       for cid, s in result.ranked],
            "precision_at_k": precision,
        }
        Path(args.out).write_text(
            json.dumps(doc, sort_keys=True, indent=1) + "\n",
            encoding="utf-8")
    return 0


def _cmd_run_matrix(args) -> int:
    cfg = FeaturizerConfig()
    datasets = _load_datasets(args.manifests, args.root, cfg)
    wanted = [p.strip() for p in args.policies.split(",") if p.strip()]
    policies = [
        (name, PromptPolicy.parse(name, not args.no_sex_aware))
        for name in wanted
    ]
    train_cfg = model_mod.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size,
        epochs=args.epochs, seed=args.seed,
    )
    reports = eval_mod.run_matrix(datasets, policies, train_cfg, cfg,
                                  embed_dim=args.embed_dim)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for report in reports:
        name = report.metadata["policy"]
        report.save(out_dir / f"report_{name}.json")
        print(f"{name:20s} accuracy {report.accuracy:.4f}")
    return 0


def _cmd_synth_corpus(args) -> int:
    if args.spec:
        spec = corpus_mod.SynthSpec.from_dict(
            json.loads(Path(args.spec).read_text(encoding="utf-8")))
        if args.seed is not None:
            spec = corpus_mod.SynthSpec(
                classes=spec.classes, clips_per_class=spec.clips_per_class,
                duration_s=spec.duration_s, sample_rate=spec.sample_rate,
                seed=args.seed, train_fraction=spec.train_fraction,
                dataset=spec.dataset,
            )
    else:
        spec = corpus_mod.SynthSpec(
            classes=corpus_mod.DEFAULT_CLASSES,
            clips_per_class=args.clips_per_class,
            seed=args.seed if args.seed is not None else 0,
            dataset=args.dataset,
        )
    records, _ = corpus_mod.synth_corpus(spec, args.out)
    print(f"wrote {len(records)} clips to {args.out}")
    return 0


def _cmd_report(args) -> int:
    written = reporting.render_reports(args.inputs, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affectclap",
        description="acoustic-prompt contrastive audio-text training "
        "and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="measure acoustic profiles")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("prompt", help="render prompt/audio pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--out", required=True)
    _policy_arg(p)
    p.set_defaults(func=_cmd_prompt)

    p = sub.add_parser("train", help="train the contrastive projections")
    p.add_argument("--manifests", nargs="+", required=True)
    p.add_argument("--root")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-batch loss CSV here")
    p.add_argument("--split", default="train", choices=("train", "all"))
    _policy_arg(p)
    _train_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-zeroshot", help="zero-shot classification")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root")
    p.add_argument("--out", required=True)
    p.add_argument("--template", default="{label}")
    p.add_argument("--split", default="test", choices=("train", "test",
                                                       "all"))
    p.set_defaults(func=_cmd_eval_zeroshot)

    p = sub.add_parser("eval-loo", help="leave-one-dataset-out evaluation")
    p.add_argument("--manifests", nargs="+", required=True)
    p.add_argument("--hold-out", required=True)
    p.add_argument("--root")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint-out")
    p.add_argument("--template", default="{label}")
    _policy_arg(p)
    _train_args(p)
    p.set_defaults(func=_cmd_eval_loo)

    p = sub.add_parser("finetune", help="train a classifier head on a "
                       "frozen checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root")
    p.add_argument("--out", required=True)
    p.add_argument("--head-epochs", type=int, default=100)
    p.add_argument("--head-lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("retrieve", help="rank a corpus against a query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root")
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("run-matrix", help="train once per prompt policy")
    p.add_argument("--manifests", nargs="+", required=True)
    p.add_argument("--root")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--policies",
                   default=",".join(n for n in POLICY_NAMES))
    p.add_argument("--no-sex-aware", action="store_true")
    _train_args(p)
    p.set_defaults(func=_cmd_run_matrix)

    p = sub.add_parser("synth-corpus", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="JSON spec file (defaults built in)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--clips-per-class", type=int, default=50)
    p.add_argument("--dataset", default="synth")
    p.set_defaults(func=_cmd_synth_corpus)

    p = sub.add_parser("report", help="render report JSONs to CSV + SVG")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except (AffectClapError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - unexpected failures
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
