"""Command-line entry point.

Subcommands cover the whole workflow: ``gen-synthetic`` writes a synthetic
embedding store + knowledge base, ``train`` runs one stage (patnet ->
protocom -> finetune, each gated on the previous stage's checkpoint),
``eval``/``fidelity`` run the episodic harness, and ``noise-sweep`` scores
accuracy against knowledge corruption for the no-fusion / mean-fusion /
gauss-fusion variants.

Options come from an optional JSON config (``--config``), overridden by
explicit flags; the ``PROTOFUSE_SEED`` environment variable overrides the
config seed (explicit ``--seed`` wins over both).  Every command is a pure
function of its inputs and seed: reruns write byte-identical reports.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""

from __future__ import annotations

import json
import os
import sys

import click

from .data import (
    SyntheticSpec,
    class_centers,
    generate_synthetic,
    load_embeddings,
    save_embeddings,
    seen_attribute_distributions,
)
from .evaluation import evaluate
from .fusion import FusionConfig
from .knowledge import inject_noise, load_knowledge, save_knowledge, split_attributes
from .neural import ScaleParam
from .numeric import NumericalError, make_rng
from .patnet import PartAttributeTransferNet
from .pipeline import FewShotPipeline
from .protocomnet import PrototypeCompletionNet, meta_finetune

_ENV_SEED = "PROTOFUSE_SEED"


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"cannot parse config {path}: {exc}") from exc


def _resolve_seed(flag_seed, cfg):
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get(_ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"{_ENV_SEED} must be an integer, got {env!r}") from exc
    return int(cfg.get("seed", 0))


def _fusion_from(cfg, method, setting):
    raw = dict(cfg.get("fusion", {}))
    if method is not None:
        raw["method"] = method
    if setting is not None:
        raw["setting"] = setting
    if raw.get("method", "mean") != "mean":
        raw.setdefault("setting", "transductive")
    return FusionConfig.from_dict(raw)


def _episode_shape(cfg, n_way, k_shot, m_query, n_episodes):
    ep = dict(cfg.get("episode", {}))
    return (
        int(n_way if n_way is not None else ep.get("n_way", 5)),
        int(k_shot if k_shot is not None else ep.get("k_shot", 1)),
        int(m_query if m_query is not None else ep.get("m_query", 15)),
        int(n_episodes if n_episodes is not None else ep.get("n_episodes", 600)),
    )


def _load_world(embeddings, knowledge):
    kb = load_knowledge(knowledge)
    store = load_embeddings(embeddings, kb=kb)
    return store, kb


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_eval_table(rows) -> None:
    header = f"{'run':<24}{'episodes':>9}{'accuracy':>10}{'ci95':>8}"
    click.echo(header)
    click.echo("-" * len(header))
    for name, report in rows:
        click.echo(
            f"{name:<24}{report.n_episodes:>9d}"
            f"{report.mean_accuracy:>10.4f}{report.ci95_halfwidth:>8.4f}"
        )


@click.group()
def cli():
    """Prototype completion and Gaussian fusion for few-shot classification."""


@cli.command("gen-synthetic")
@click.option("--out-embeddings", required=True, type=click.Path(dir_okay=False))
@click.option("--out-knowledge", required=True, type=click.Path(dir_okay=False))
@click.option("--n-base", type=click.IntRange(min=1), default=48, show_default=True)
@click.option("--n-novel", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--n-attributes", type=click.IntRange(min=1), default=24, show_default=True)
@click.option("--attrs-per-class", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--dim", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--samples-per-class", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--attr-scale", type=float, default=1.0, show_default=True)
@click.option("--class-offset-scale", type=float, default=0.25, show_default=True)
@click.option("--sample-noise-scale", type=float, default=0.4, show_default=True)
@click.option("--incompleteness-rate", type=click.FloatRange(0.0, 1.0), default=0.5, show_default=True)
@click.option("--seed", type=int, default=None)
def gen_synthetic(
    out_embeddings, out_knowledge, n_base, n_novel, n_attributes, attrs_per_class,
    dim, samples_per_class, attr_scale, class_offset_scale, sample_noise_scale,
    incompleteness_rate, seed,
):
    """Write a synthetic embedding store and knowledge base."""
    seed = _resolve_seed(seed, {})
    spec = SyntheticSpec(
        n_base_classes=n_base,
        n_novel_classes=n_novel,
        n_attributes=n_attributes,
        attrs_per_class=attrs_per_class,
        dim=dim,
        samples_per_class=samples_per_class,
        attr_scale=attr_scale,
        class_offset_scale=class_offset_scale,
        sample_noise_scale=sample_noise_scale,
        incompleteness_rate=incompleteness_rate,
    )
    store, kb = generate_synthetic(spec, make_rng(seed))
    save_embeddings(store, out_embeddings)
    save_knowledge(kb, out_knowledge)
    click.echo(
        f"wrote {len(store)} embeddings (dim {store.dim}) to {out_embeddings}; "
        f"{len(kb.classes)} classes / {kb.n_attributes} attributes to {out_knowledge}"
    )


def _require_checkpoint(path, stage_needed):
    if path is None or not os.path.exists(path):
        raise ValueError(
            f"missing prerequisite: stage {stage_needed!r} checkpoint not found at {path}"
        )


@cli.command("train")
@click.argument("stage", type=click.Choice(["patnet", "protocom", "finetune"]))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--knowledge", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--patnet-checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--protocom-checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--epochs", type=click.IntRange(min=0), default=None,
              help="Override the stage's epoch/episode count.")
@click.option("--fusion", "fusion_method", type=click.Choice(["mean", "two_step", "em", "improved_em"]), default=None)
@click.option("--setting", type=click.Choice(["inductive", "transductive"]), default=None)
@click.option("--seed", type=int, default=None)
def train(
    stage, config_path, embeddings, knowledge, output_dir, patnet_checkpoint,
    protocom_checkpoint, epochs, fusion_method, setting, seed,
):
    """Run one training stage and write its checkpoint + report."""
    cfg = _load_config(config_path)
    seed = _resolve_seed(seed, cfg)
    store, kb = _load_world(embeddings, knowledge)
    os.makedirs(output_dir, exist_ok=True)
    patnet_ckpt = patnet_checkpoint or os.path.join(output_dir, "patnet.ckpt")
    protocom_ckpt = protocom_checkpoint or os.path.join(output_dir, "protocom.ckpt")

    if stage == "patnet":
        hyper = dict(cfg.get("patnet", {}))
        if epochs is not None:
            hyper["epochs"] = epochs
        hyper.setdefault("seed", seed)
        net = PartAttributeTransferNet(**hyper)
        split = split_attributes(kb)
        seen = seen_attribute_distributions(store, kb, split.seen)
        net.fit(kb, seen)
        out = os.path.join(output_dir, "patnet.ckpt")
        net.save(out)
        report = {"stage": "patnet", "seed": seed, **net.report_.to_dict()}
        report_path = os.path.join(output_dir, "patnet_report.json")
    elif stage == "protocom":
        _require_checkpoint(patnet_ckpt, "patnet")
        patnet = PartAttributeTransferNet.load(patnet_ckpt)
        hyper = dict(cfg.get("protocom", {}))
        if epochs is not None:
            hyper["episodes"] = epochs
        hyper.setdefault("seed", seed)
        net = PrototypeCompletionNet(**hyper)
        pipe = FewShotPipeline(seed=seed)
        priors = pipe.build_priors(store, kb, patnet)
        net.build(store.dim, kb.embedding_dim)
        net.fit(store, kb, priors, rng=make_rng(seed))
        out = os.path.join(output_dir, "protocom.ckpt")
        net.save(out, gamma=float(cfg.get("finetune", {}).get("gamma_init", 10.0)))
        report = {"stage": "protocom", "seed": seed, **net.report_.to_dict()}
        report_path = os.path.join(output_dir, "protocom_report.json")
    else:
        _require_checkpoint(patnet_ckpt, "patnet")
        _require_checkpoint(protocom_ckpt, "protocom")
        patnet = PartAttributeTransferNet.load(patnet_ckpt)
        net, gamma_value = PrototypeCompletionNet.load(protocom_ckpt)
        hyper = dict(cfg.get("finetune", {}))
        if epochs is not None:
            hyper["episodes"] = epochs
        gamma = ScaleParam(float(hyper.pop("gamma_init", gamma_value or 10.0)))
        pipe = FewShotPipeline(seed=seed)
        priors = pipe.build_priors(store, kb, patnet)
        fusion_cfg = _fusion_from(cfg, fusion_method, setting)
        report_obj = meta_finetune(
            net, gamma, store, kb, priors, fusion_cfg,
            n_way=int(hyper.get("n_way", 5)),
            k_shot=int(hyper.get("k_shot", 1)),
            m_query=int(hyper.get("m_query", 15)),
            episodes=int(hyper.get("episodes", 200)),
            lr=float(hyper.get("lr", 1e-3)),
            momentum=float(hyper.get("momentum", 0.9)),
            weight_decay=float(hyper.get("weight_decay", 5e-4)),
            rng=make_rng(seed),
        )
        out = os.path.join(output_dir, "finetune.ckpt")
        net.save(out, gamma=gamma.value)
        report = {"stage": "finetune", "seed": seed, "gamma": gamma.value, **report_obj.to_dict()}
        report_path = os.path.join(output_dir, "finetune_report.json")

    _write_json(report_path, report)
    click.echo(f"stage {stage}: checkpoint {out}, report {report_path}")


def _assembled_pipeline(embeddings, knowledge, patnet_ckpt, protocom_ckpt, fusion_cfg):
    _require_checkpoint(patnet_ckpt, "patnet")
    _require_checkpoint(protocom_ckpt, "protocom")
    store, kb = _load_world(embeddings, knowledge)
    patnet = PartAttributeTransferNet.load(patnet_ckpt)
    protocom, gamma = PrototypeCompletionNet.load(protocom_ckpt)
    pipe = FewShotPipeline(fusion=fusion_cfg).assemble(
        store, kb, patnet, protocom, gamma if gamma is not None else 10.0
    )
    return store, kb, pipe


_eval_options = [
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False)),
    click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--knowledge", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--patnet-checkpoint", required=True, type=click.Path(dir_okay=False)),
    click.option("--protocom-checkpoint", required=True, type=click.Path(dir_okay=False)),
    click.option("--split", default="novel-test", show_default=True),
    click.option("--fusion", "fusion_method", type=click.Choice(["mean", "two_step", "em", "improved_em"]), default=None),
    click.option("--setting", type=click.Choice(["inductive", "transductive"]), default=None),
    click.option("--n-way", type=click.IntRange(min=2), default=None),
    click.option("--k-shot", type=click.IntRange(min=1), default=None),
    click.option("--m-query", type=click.IntRange(min=1), default=None),
    click.option("--n-episodes", type=click.IntRange(min=1), default=None),
    click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None),
    click.option("--seed", type=int, default=None),
]


def _with_eval_options(fn):
    for opt in reversed(_eval_options):
        fn = opt(fn)
    return fn


def _run_harness(config_path, embeddings, knowledge, patnet_checkpoint,
                 protocom_checkpoint, split, fusion_method, setting, n_way, k_shot,
                 m_query, n_episodes, out_path, seed, with_fidelity):
    cfg = _load_config(config_path)
    seed = _resolve_seed(seed, cfg)
    fusion_cfg = _fusion_from(cfg, fusion_method, setting)
    n_way, k_shot, m_query, n_episodes = _episode_shape(cfg, n_way, k_shot, m_query, n_episodes)
    store, kb, pipe = _assembled_pipeline(
        embeddings, knowledge, patnet_checkpoint, protocom_checkpoint, fusion_cfg
    )
    centers = class_centers(store, split) if with_fidelity else None
    report = evaluate(
        pipe, store, split, n_episodes, n_way, k_shot, m_query, seed,
        true_centers=centers,
    )
    payload = {
        "seed": seed,
        "split": split,
        "episode": {"n_way": n_way, "k_shot": k_shot, "m_query": m_query, "n_episodes": n_episodes},
        "fusion": fusion_cfg.to_dict(),
        **report.to_dict(),
    }
    _print_eval_table([(f"{fusion_cfg.method}/{split}", report)])
    if report.fidelity is not None:
        click.echo(
            "fidelity: mean_based {mean_based:.4f}  completed {completed:.4f}  "
            "fused {fused:.4f}".format(**report.fidelity)
        )
    if out_path is not None:
        _write_json(out_path, payload)
        click.echo(f"report written to {out_path}")


@cli.command("eval")
@_with_eval_options
@click.option("--fidelity", "with_fidelity", is_flag=True, default=False,
              help="Also report prototype fidelity against class centers.")
def eval_cmd(with_fidelity, **kw):
    """Episodic evaluation of a trained pipeline."""
    _run_harness(with_fidelity=with_fidelity, **kw)


@cli.command("fidelity")
@_with_eval_options
def fidelity_cmd(**kw):
    """Evaluation plus the prototype-fidelity triple."""
    _run_harness(with_fidelity=True, **kw)


@cli.command("noise-sweep")
@_with_eval_options
@click.option("--gammas", required=True,
              help="Comma-separated flip probabilities, e.g. 0,0.1,0.2,0.3")
def noise_sweep(
    config_path, embeddings, knowledge, patnet_checkpoint, protocom_checkpoint,
    split, fusion_method, setting, n_way, k_shot, m_query, n_episodes, out_path,
    seed, gammas,
):
    """Accuracy vs knowledge-noise level for none/mean/gauss fusion."""
    try:
        gamma_list = [float(x) for x in gammas.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise click.BadParameter(f"bad --gammas value: {exc}")
    if not gamma_list:
        raise click.BadParameter("empty gamma list")
    cfg = _load_config(config_path)
    seed = _resolve_seed(seed, cfg)
    n_way, k_shot, m_query, n_episodes = _episode_shape(cfg, n_way, k_shot, m_query, n_episodes)
    gauss_cfg = _fusion_from(cfg, fusion_method or "improved_em", setting or "transductive")
    if gauss_cfg.method == "mean":
        raise ValueError("noise-sweep's gauss column needs a transductive fusion method")
    store, kb, pipe = _assembled_pipeline(
        embeddings, knowledge, patnet_checkpoint, protocom_checkpoint, gauss_cfg
    )
    mean_pipe = pipe.with_fusion(FusionConfig(method="mean"))

    noise_streams = [make_rng(seed + 1000 + i) for i in range(len(gamma_list))]
    results = {"none": [], "mean": [], "gauss": []}
    for gamma_value, noise_rng in zip(gamma_list, noise_streams):
        noisy_kb = inject_noise(kb, gamma_value, noise_rng)
        common = dict(
            store=store, split=split, n_episodes=n_episodes, n_way=n_way,
            k_shot=k_shot, m_query=m_query, seed=seed, kb=noisy_kb,
        )
        results["none"].append(
            evaluate(mean_pipe, prototype_source="completed", **common).mean_accuracy
        )
        results["mean"].append(evaluate(mean_pipe, **common).mean_accuracy)
        results["gauss"].append(evaluate(pipe, **common).mean_accuracy)

    header = f"{'fusion':<10}" + "".join(f"g={g:<8.2f}" for g in gamma_list)
    click.echo(header)
    click.echo("-" * len(header))
    for name in ("none", "mean", "gauss"):
        click.echo(f"{name:<10}" + "".join(f"{a:<10.4f}" for a in results[name]))
    if out_path is not None:
        _write_json(
            out_path,
            {"seed": seed, "split": split, "gammas": gamma_list, "accuracy": results,
             "episode": {"n_way": n_way, "k_shot": k_shot, "m_query": m_query,
                         "n_episodes": n_episodes},
             "fusion": gauss_cfg.to_dict()},
        )
        click.echo(f"report written to {out_path}")


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3
    except (ValueError, OSError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
