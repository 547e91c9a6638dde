"""Command-line shell: train / gb-demo / probe / sweep / cost-model / report.

Exit codes: 0 success, 1 config or data error, 2 usage error (argparse),
3 probe assertion failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from xgblora import probes
from xgblora.boosting import (
    BoostConfig,
    BoostRun,
    ConfigError,
    CostModel,
    classic_gb_fit,
    cost_model_estimate,
    full_finetune,
    xgblora_fit,
)
from xgblora.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from xgblora.config import ConfigFileError, RunConfig, load_config, save_config
from xgblora.lora import param_count
from xgblora.models import accuracy, build_transformer, loss_eval
from xgblora.reporting import (
    MetricsWriter,
    ReportError,
    adapter_update_bytes,
    emit_report,
    model_update_bytes,
)
from xgblora.tasks import gen_sequence_dataset, gen_teacher_dataset
from xgblora.tensor import Rng

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_USAGE = 2
EXIT_PROBE_FAILED = 3


def build_task(cfg: RunConfig):
    """(dataset, model, task-or-None) for the configured task."""
    dtype = np.float32 if cfg.precision == "f32" else np.float64
    if cfg.task in ("teacher-matrix", "teacher-mlp"):
        dims = cfg.dims_list()
        data, task = gen_teacher_dataset(
            cfg.task,
            dims,
            n=cfg.n_examples,
            noise=cfg.noise,
            seed=cfg.seed,
            delta_scale=cfg.delta_scale,
            delta_kind=cfg.delta_kind,
        )
        model = task.make_student()
        if dtype == np.float32:
            for w in model.weights.values():
                w.data = w.data.astype(dtype)
            model.dtype = dtype
        return data, model, task
    if cfg.task == "parity-seq":
        data = gen_sequence_dataset("parity", seq_len=cfg.seq_len, n=cfg.n_examples, seed=cfg.seed)
        vocab = 2
    else:  # char-classify
        data = gen_sequence_dataset(
            "copy", seq_len=cfg.seq_len, n=cfg.n_examples, seed=cfg.seed, vocab=cfg.vocab
        )
        vocab = cfg.vocab
    model = build_transformer(
        vocab=vocab,
        d_model=cfg.d_model,
        n_layers=cfg.n_layers,
        n_heads=cfg.n_heads,
        d_ff=cfg.d_ff,
        rng=Rng(cfg.seed + 1),
        max_seq=cfg.seq_len,
        dtype=dtype,
    )
    return data, model, None


def _boost_config(cfg: RunConfig) -> BoostConfig:
    return BoostConfig(
        iterations=cfg.iterations,
        steps_per_booster=cfg.kappa,
        total_steps=cfg.total_steps,
        rank=cfg.rank,
        sample_layers=cfg.sample_layers,
        lam=cfg.lam,
        eta=cfg.eta,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        policy=cfg.policy,
    )


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    for name in (
        "method", "iterations", "kappa", "total_steps", "rank", "sample_layers", "lam",
        "eta", "batch_size", "policy", "seed", "task", "dims", "noise", "n_examples",
        "seq_len", "d_model", "n_layers", "n_heads", "d_ff", "precision", "out_dir",
        "verbose_metrics",
    ):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    # an explicit -T/--kappa pair is a complete schedule; it beats the
    # default step budget
    if args.iterations is not None and args.kappa is not None and args.total_steps is None:
        cfg.total_steps = args.iterations * args.kappa
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(cfg.out_dir, "run.cfg"))
    data, model, _ = build_task(cfg)
    dtype_size = 4 if cfg.precision == "f32" else 8
    run_id = f"{cfg.method}-seed{cfg.seed}"
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.xgbl")

    if cfg.method == "full-ft":
        counts = param_count(model)
        with MetricsWriter(os.path.join(cfg.out_dir, "metrics.csv"), run_id, counts["permille"]) as mw:
            model, losses = full_finetune(
                model, data, total_steps=cfg.total_steps or 256, eta=cfg.eta,
                batch_size=cfg.batch_size, seed=cfg.seed,
            )
            mw.write_step(1, len(losses), losses[-1], model_update_bytes(model, dtype_size))
        save_checkpoint(ckpt_path, model, step=len(losses))
        print(f"final loss {loss_eval(model, data):.6g}")
        return EXIT_OK

    bc = _boost_config(cfg)
    if cfg.method == "lora":
        bc = BoostConfig(
            iterations=1,
            steps_per_booster=bc.total_steps,
            rank=cfg.rank,
            sample_layers=model.layers,
            lam=cfg.lam,
            eta=cfg.eta,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            policy=cfg.policy,
        )
    counts = param_count(model, policy=cfg.policy, r=bc.rank)
    if args.resume:
        state = load_checkpoint(args.resume)
        run = BoostRun(model=state.model, data=data, cfg=bc, rng=Rng(0))
        run.rng.state = state.rng_state
        run.global_step = state.step
        run.booster = state.booster or 1
        run.adapters = state.adapters
        if run.adapters is not None:
            from xgblora.boosting import BoosterTrace, PairStats

            done = state.step - (run.booster - 1) * bc.steps_per_booster
            run.trace = BoosterTrace(
                t=run.booster,
                selected_layers=sorted({w.layer for w in run.adapters.pairs}),
                prior_steps=done,
            )
            run.trace.pair_stats = {
                str(wid): PairStats(target=str(wid)) for wid in run.adapters.targets()
            }
        model = run.model
    else:
        run = BoostRun(model=model, data=data, cfg=bc, rng=Rng(bc.seed))

    with MetricsWriter(os.path.join(cfg.out_dir, "metrics.csv"), run_id, counts["permille"]) as mw:
        def on_merge(trace):
            nbytes = adapter_update_bytes(run.adapters, dtype_size)
            if cfg.verbose_metrics:
                first = run.global_step - len(trace.step_losses) + 1
                for i, loss in enumerate(trace.step_losses):
                    mw.write_step(trace.t, first + i, loss, nbytes)
            mw.write_iteration(trace, run.global_step, nbytes)

        xgblora_fit(model, data, bc, on_merge=on_merge, stop_after_step=args.stop_after_step, run=run)

    save_checkpoint(
        ckpt_path,
        model,
        step=run.global_step,
        booster=run.booster,
        rng_state=run.rng.state,
        adapters=run.adapters,
    )
    status = "done" if run.done else f"paused at step {run.global_step}"
    print(f"{status}; train loss {loss_eval(model, data):.6g}")
    if model.output_map == "softmax-ce":
        print(f"train accuracy {accuracy(model, data):.4f}")
    return EXIT_OK


def cmd_gb_demo(args) -> int:
    rng = Rng(args.seed)
    x = rng.uniform((args.n,)) * 4.0 - 2.0
    y = np.sin(2.0 * x) + args.noise * rng.gaussian((args.n,))
    gb = classic_gb_fit(x, y, rounds=args.rounds, weak=args.weak)
    print(f"classic gradient boosting: {args.rounds} rounds of {args.weak} learners on n={args.n}")
    for i, m in enumerate(gb.mse_history, start=1):
        if i <= 5 or i % 10 == 0 or i == args.rounds:
            print(f"round {i:3d}  mse {m:.6g}")
    ratio = gb.mse_history[-1] / gb.mse_history[0] if gb.mse_history[0] else 0.0
    print(f"final/initial mse ratio: {ratio:.4g}")
    return EXIT_OK


def _probe_outputs(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, f"{report.probe}.csv"))
    report.write_json(os.path.join(out_dir, f"{report.probe}.json"))
    for name, ok in sorted(report.checks.items()):
        print(f"[{'pass' if ok else 'FAIL'}] {name}")
    for note in report.notes:
        print(f"note: {note}")
    print(f"wrote {report.probe}.csv / {report.probe}.json to {out_dir}")
    return EXIT_OK if report.passed else EXIT_PROBE_FAILED


def cmd_probe(args) -> int:
    seeds = tuple(range(args.seeds))
    if args.which == "lemma1":
        data, task = gen_teacher_dataset("teacher-matrix", [16, 16], n=256, seed=args.seed)
        report = probes.gradient_approx_probe(
            task, data, r_grid=(1, 2, 4, 8, 16), m_grid=(4, 16, 64), seeds=seeds
        )
    elif args.which == "lemma2":
        corpus = probes.run_booster_corpus(
            boosters_per_config=max(1, args.runs // 9), seed=args.seed
        )
        report = probes.update_norm_probe(corpus)
    elif args.which == "lemma3":
        data, task = gen_teacher_dataset("teacher-matrix", [6, 4], n=64, seed=args.seed)
        model = task.make_student()
        wid = probes.list_adaptable_weights(model)[0]
        grad_fn = probes.model_grad_fn(model, data, wid)
        est = probes.lipschitz_probe(
            grad_fn, model.weights[wid].shape, n_pairs=2000, radius=1.0, rng=Rng(args.seed)
        )
        beta, mu = probes.quadratic_curvature(data)
        report = est.as_report()
        report.constants.beta = beta
        report.constants.mu = mu
        report.checks["estimate_le_beta"] = est.value <= beta * 1.05
    elif args.which == "theorem1":
        data, task = gen_teacher_dataset("teacher-matrix", [8, 8], n=128, seed=args.seed, noise=0.2)
        report = probes.convergence_sweep(
            task, data, t_grid=(1, 4, 16, 64), r_grid=(1,), kappa=8,
            seeds=seeds, eta=2.6, batch_size=128,
        )
    else:  # theorem2
        data, task = gen_teacher_dataset(
            "teacher-matrix", [16, 16], n=128, seed=args.seed,
            delta_kind="rotation", delta_scale=4.0,
        )
        report = probes.expressiveness_sweep(
            task, data, total_steps=512,
            rt_grid=((1, 64), (8, 1), (1, 1), (16, 1)), seeds=seeds,
        )
    return _probe_outputs(report, args.out_dir)


def cmd_sweep(args) -> int:
    data, task = gen_teacher_dataset(
        "teacher-matrix", [16, 16], n=128, seed=args.seed,
        delta_kind="rotation", delta_scale=4.0,
    )
    rt_grid = [(r, t) for r in args.ranks for t in args.iterations if args.total_steps % t == 0]
    report = probes.expressiveness_sweep(
        task, data, total_steps=args.total_steps, rt_grid=rt_grid, seeds=tuple(range(args.seeds))
    )
    os.makedirs(args.out_dir, exist_ok=True)
    report.write_csv(os.path.join(args.out_dir, "sweep.csv"))
    report.write_json(os.path.join(args.out_dir, "sweep.json"))
    for p in report.points:
        print(f"r={p.params['r']:3d} T={p.params['t']:4d}  err={p.mean:.6g} +- {p.std:.3g}")
    print(f"wrote sweep.csv / sweep.json to {args.out_dir}")
    return EXIT_OK


def cmd_cost_model(args) -> int:
    cm = CostModel(
        alpha_cost=args.alpha,
        beta_cost=args.beta,
        layers=args.layers,
        total_steps=args.total_steps,
        iterations=args.iterations,
        rank=args.rank,
        full_rank=args.full_rank,
        adapted_layers=args.adapted_layers if args.adapted_layers is not None else args.layers / 3,
    )
    presets = {
        "lora": ("lora", cm),
        "xgblora-r8": ("xgblora", CostModel(**{**cm.__dict__, "rank": cm.full_rank})),
        "xgblora-r1": ("xgblora", CostModel(**{**cm.__dict__, "rank": 1})),
    }
    rows = [presets[args.preset]] if args.preset else [("lora", cm), ("xgblora", cm)]
    for method, model in rows:
        got = cost_model_estimate(model, method)
        label = "L*alpha*K + beta" if method == "lora" else "l*alpha*(r/R)*K + beta"
        print(
            f"{method:8s} per-learner={got['per_learner']:.6g} steps/iter={got['steps_per_iter']:.6g} "
            f"iters={got['iters']} total={got['total']:.6g}  ({label})"
        )
    return EXIT_OK


def cmd_report(args) -> int:
    written = emit_report(args.csv_dir, args.out_dir)
    for name in sorted(written):
        print(f"wrote {name} ({written[name]} bytes)")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xgblora", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training method on a synthetic task")
    p.add_argument("--config", help="key=value config file; flags override")
    p.add_argument("--method", choices=("xgblora", "lora", "full-ft"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--iterations", "-T", type=int, dest="iterations")
    p.add_argument("--kappa", type=int)
    p.add_argument("--total-steps", "-K", type=int, dest="total_steps")
    p.add_argument("--r", "--rank", type=int, dest="rank")
    p.add_argument("--layers", type=int, dest="sample_layers")
    p.add_argument("--lam", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--policy", choices=("qv", "all"))
    p.add_argument("--task", choices=("teacher-matrix", "teacher-mlp", "parity-seq", "char-classify"))
    p.add_argument("--dims")
    p.add_argument("--noise", type=float)
    p.add_argument("--n-examples", type=int, dest="n_examples")
    p.add_argument("--seq-len", type=int, dest="seq_len")
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--n-layers", type=int, dest="n_layers")
    p.add_argument("--n-heads", type=int, dest="n_heads")
    p.add_argument("--d-ff", type=int, dest="d_ff")
    p.add_argument("--precision", choices=("f64", "f32"))
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--stop-after-step", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--verbose-metrics", action="store_true", default=None, dest="verbose_metrics")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gb-demo", help="classic residual-fitting gradient boosting on 1-D data")
    p.add_argument("--rounds", type=int, default=50)
    p.add_argument("--weak", choices=("linear", "stump"), default="stump")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gb_demo)

    p = sub.add_parser("probe", help="run one bound probe and write its report")
    p.add_argument("which", choices=("lemma1", "lemma2", "lemma3", "theorem1", "theorem2"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--seeds", type=int, default=5, help="replicates per grid point")
    p.add_argument("--runs", type=int, default=54, help="booster count for lemma2")
    p.add_argument("--out-dir", default="runs/probe")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("sweep", help="rank x iterations grid at fixed step budget")
    p.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--iterations", type=int, nargs="+", default=[1, 8, 64])
    p.add_argument("--total-steps", type=int, default=512)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="runs/sweep")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("cost-model", help="analytic total-cost calculator")
    p.add_argument("--preset", choices=("lora", "xgblora-r8", "xgblora-r1"))
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--layers", type=int, default=32)
    p.add_argument("--total-steps", type=int, default=1000)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--full-rank", type=int, default=8)
    p.add_argument("--adapted-layers", type=float, default=None)
    p.set_defaults(fn=cmd_cost_model)

    p = sub.add_parser("report", help="aggregate metrics CSVs into markdown + SVG")
    p.add_argument("csv_dir")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigFileError, ConfigError, CheckpointError, ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
