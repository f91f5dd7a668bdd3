"""Command-line experiment harness.

Exit codes: 0 success, 2 usage, 3 I/O, 4 training divergence, 5 empty prompt store.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .continual import STRATEGIES, TrainingDiverged, run_stream
from .denoiser import Denoiser, load_checkpoint
from .evaluation import (
    bwt,
    copy_generator,
    eval_checkpoint,
    evaluate_params,
    fwt,
    pipeline_generator,
    quality_matrix,
)
from .inference import GUIDANCE_MODES, generate
from .io import atomic_write_text, write_video
from .retrieval import EmptyStoreError, PromptStore
from .synthdata import Dataset, gen_dataset

log = logging.getLogger("vidclearn")

EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_EMPTY_STORE = 2, 3, 4, 5

LAMBDA_GRID = (0.0, 1.0, 10.0, 20.0, 30.0)
# balance coefficient used alongside each temporal weight in the ablation grid
ALPHA_FOR_LAMBDA = {0.0: 0.7, 1.0: 0.7, 10.0: 0.8, 20.0: 0.8, 30.0: 0.8}

METRICS_HEADER = ["strategy", "task_count", "fvd_s", "fid_s", "align", "bwt", "fwt", "seed"]
ABLATION_HEADER = ["guidance", "alpha", "gamma", "lambda", "fvd_s", "fid_s", "align", "seed", "config"]


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    if isinstance(x, (float, np.floating)):
        return repr(round(float(x), 10))
    return str(x)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _open_dataset(path) -> Dataset:
    try:
        return Dataset(path)
    except FileNotFoundError as exc:
        raise CliError(f"dataset not found: {exc}", EXIT_USAGE) from exc


def _config(args) -> RunConfig:
    try:
        return load_config(getattr(args, "config", None), preset=getattr(args, "preset", None),
                           seed=getattr(args, "seed", None))
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"invalid config: {exc}", EXIT_USAGE) from exc
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_IO) from exc


def _run_config(run_dir: Path, args) -> RunConfig:
    if getattr(args, "config", None):
        return _config(args)
    run = json.loads((run_dir / "run.json").read_text())
    return load_config(None, **run["run_config"])


def _checkpoints(run_dir: Path) -> list[Path]:
    ck = sorted(run_dir.glob("task_*.ckpt"), key=lambda p: int(p.stem.split("_")[1]))
    if not ck:
        raise CliError(f"no checkpoints in {run_dir}", EXIT_IO)
    return ck


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.train < 1 or args.eval < 0 or args.frames < 2 or args.size < 4:
        raise CliError("need --train >= 1, --eval >= 0, --frames >= 2, --size >= 4", EXIT_USAGE)
    try:
        manifest = gen_dataset(args.train, args.eval, args.seed, args.frames, args.size, args.size, args.out)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    print(f"wrote {len(manifest['entries'])} videos to {args.out}")
    return 0


def train_run(data: Dataset, strategy: str, cfg: RunConfig, out_dir) -> list[Path]:
    extra = {"run_config": cfg.to_dict(), "data_dir": str(Path(data.root).resolve())}
    ckpts, _, _ = run_stream(data.split("train"), strategy, cfg.train_config(), out_dir, extra_manifest=extra)
    return ckpts


def cmd_train(args) -> int:
    data = _open_dataset(args.data)
    cfg = _config(args)
    try:
        ckpts = train_run(data, args.strategy, cfg, args.out)
    except TrainingDiverged as exc:
        raise CliError(f"training diverged: {exc}", EXIT_DIVERGED) from exc
    print(f"{args.strategy}: {len(ckpts)} checkpoints in {args.out}")
    return 0


def cmd_generate(args) -> int:
    data = _open_dataset(args.data)
    cfg = _config(args)
    store = PromptStore.load(args.store)
    params, arch, _ = load_checkpoint(args.checkpoint)
    settings = cfg.inference_settings(args.guidance)
    try:
        video, entry, score = generate(Denoiser(arch), params, store, data.video, args.prompt, settings)
    except EmptyStoreError as exc:
        raise CliError(str(exc), EXIT_EMPTY_STORE) from exc
    write_video(args.out, video.astype(np.float32))
    log.info("guidance=%s source=%s caption=%r score=%.6f", settings.guidance, entry.video_id, entry.prompt, score)
    print(json.dumps({"guidance": settings.guidance, "source_video": entry.video_id,
                      "source_caption": entry.prompt, "score": score, "out": str(args.out)}))
    return 0


def _generator(name, settings):
    return copy_generator if name == "copy" else pipeline_generator(settings)


def evaluate_run(run_dir, data: Dataset, cfg: RunConfig, guidance=None, generator="pipeline"):
    """Metrics rows for every checkpoint plus the quality matrix and baseline."""
    run_dir = Path(run_dir)
    run = json.loads((run_dir / "run.json").read_text())
    store = PromptStore.load(run_dir / "prompts.json")
    ckpts = _checkpoints(run_dir)
    settings = cfg.inference_settings(guidance)
    gen = _generator(generator, settings)
    evals = data.split("eval")
    R, b = quality_matrix(ckpts, store, data, settings, gen, baseline_seed=cfg.seed)
    rows = []
    for i, ck in enumerate(ckpts):
        m = eval_checkpoint(ck, store, data, evals, settings, gen, cfg.extractor_seed)
        k = i + 1
        tb = bwt(R[:k, :k]) if k >= 2 else None
        tf = fwt(R[:k, :k], b[:k]) if k >= 2 else None
        rows.append([run["strategy"], k, m.fvd_s, m.fid_s, m.align, tb, tf, cfg.seed])
    return rows, R, b


def _matrix_csv(R, b) -> str:
    k = R.shape[0]
    rows = [[f"after_task_{i}", *R[i]] for i in range(k)] + [["baseline", *b]]
    return _csv_text(["row", *[f"task_{j}" for j in range(k)]], rows)


def cmd_eval(args) -> int:
    data = _open_dataset(args.data)
    run_dir = Path(args.run)
    try:
        cfg = _run_config(run_dir, args)
        rows, R, b = evaluate_run(run_dir, data, cfg, args.guidance, args.generator)
        out = Path(args.out)
        atomic_write_text(out, _csv_text(METRICS_HEADER, rows))
        atomic_write_text(out.with_name("matrix.csv"), _matrix_csv(R, b))
    except OSError as exc:
        raise CliError(f"I/O failure: {exc}", EXIT_IO) from exc
    final = rows[-1]
    summary = (f"strategy={final[0]} tasks={final[1]} fvd_s={_fmt(final[2])} fid_s={_fmt(final[3])} "
               f"align={_fmt(final[4])} BWT={_fmt(final[5])} FWT={_fmt(final[6])}")
    atomic_write_text(out.with_name("summary.txt"), summary + "\n")
    print(summary)
    return 0


def cmd_matrix(args) -> int:
    run_dir = Path(args.run)
    try:
        run = json.loads((run_dir / "run.json").read_text())
        data = _open_dataset(args.data or run["data_dir"])
        cfg = _run_config(run_dir, args)
        store = PromptStore.load(run_dir / "prompts.json")
        settings = cfg.inference_settings(args.guidance)
        R, b = quality_matrix(_checkpoints(run_dir), store, data, settings,
                              _generator(args.generator, settings), baseline_seed=cfg.seed)
        atomic_write_text(args.out, _matrix_csv(R, b))
    except OSError as exc:
        raise CliError(f"I/O failure: {exc}", EXIT_IO) from exc
    if R.shape[0] >= 2:
        print(f"BWT={_fmt(bwt(R))} FWT={_fmt(fwt(R, b))}")
    return 0


def run_ablation(data: Dataset, sweep: str, base: RunConfig, out_dir) -> list[list]:
    out_dir = Path(out_dir)
    modes = ("last", "retrieval") if sweep == "guidance" else (base.guidance,)
    evals = data.split("eval")
    rows = []
    for lam in LAMBDA_GRID:
        cfg = base.with_overrides(lambda_t=lam, alpha=ALPHA_FOR_LAMBDA[lam], gamma=1.0)
        ckpts = train_run(data, "vidclearn", cfg, out_dir / f"lambda_{lam:g}")
        params, arch, _ = load_checkpoint(ckpts[-1])
        store = PromptStore.load(out_dir / f"lambda_{lam:g}" / "prompts.json")
        for mode in modes:
            m = evaluate_params(Denoiser(arch), params, store, data, evals,
                                pipeline_generator(cfg.inference_settings(mode)), cfg.extractor_seed)
            echo = json.dumps({**cfg.to_dict(), "guidance": mode}, sort_keys=True)
            rows.append([mode, cfg.alpha, cfg.gamma, lam, m.fvd_s, m.fid_s, m.align, cfg.seed, echo])
    atomic_write_text(out_dir / "ablation.csv", _csv_text(ABLATION_HEADER, rows))
    return rows


def cmd_ablate(args) -> int:
    data = _open_dataset(args.data)
    cfg = _config(args)
    try:
        rows = run_ablation(data, args.sweep, cfg, args.out)
    except TrainingDiverged as exc:
        raise CliError(f"training diverged: {exc}", EXIT_DIVERGED) from exc
    for r in rows:
        print(f"guidance={r[0]} alpha={r[1]} gamma={r[2]} lambda={r[3]} "
              f"fvd_s={_fmt(r[4])} fid_s={_fmt(r[5])} align={_fmt(r[6])}")
    return 0


def cmd_dump_config(args) -> int:
    cfg = _config(args)
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidclearn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON run config (strict keys)")
        sp.add_argument("--preset", choices=["desk", "paper"], default=None)
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")

    g = sub.add_parser("gen-data", help="generate a synthetic captioned video dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int, default=12)
    g.add_argument("--eval", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--size", type=int, default=16)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one strategy over the training stream")
    t.add_argument("--data", required=True)
    t.add_argument("--strategy", choices=STRATEGIES, required=True)
    t.add_argument("--out", required=True)
    with_config(t)
    t.set_defaults(func=cmd_train)

    gen = sub.add_parser("generate", help="guided generation for one prompt")
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--store", required=True)
    gen.add_argument("--data", required=True)
    gen.add_argument("--prompt", required=True)
    gen.add_argument("--guidance", choices=GUIDANCE_MODES, default=None)
    gen.add_argument("--out", required=True)
    with_config(gen)
    gen.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="metrics.csv + matrix.csv for a training run")
    e.add_argument("--data", required=True)
    e.add_argument("--run", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--guidance", choices=GUIDANCE_MODES, default=None)
    e.add_argument("--generator", choices=["pipeline", "copy"], default="pipeline",
                   help="'copy' returns ground truth (test hook)")
    with_config(e)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("matrix", help="task-quality matrix and BWT/FWT for a run")
    m.add_argument("--run", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--data", default=None, help="defaults to the dataset recorded in run.json")
    m.add_argument("--guidance", choices=GUIDANCE_MODES, default=None)
    m.add_argument("--generator", choices=["pipeline", "copy"], default="pipeline")
    with_config(m)
    m.set_defaults(func=cmd_matrix)

    a = sub.add_parser("ablate", help="temporal-weight or guidance ablation sweep")
    a.add_argument("--data", required=True)
    a.add_argument("--sweep", choices=["lambda", "guidance"], required=True)
    a.add_argument("--out", required=True)
    with_config(a)
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("dump-config", help="print the effective config")
    d.add_argument("--out", default=None)
    with_config(d)
    d.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except EmptyStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_STORE
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
