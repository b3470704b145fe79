"""Command-line entry point.

Exit codes: 0 success, 1 data or validation failure, 2 usage error.
Diagnostics go to stderr; results go to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .camera import DomainError
from .config import ConfigError, RunConfig, resolve_config
from .evaluation import PipelineConfig, evaluate_corpus, grounding_accuracy, detection_f1, load_category_set, rescale_sweep
from .geometry import Box3D, iou_3d, iou_3d_mc_oracle
from .protocol import AnswerBox
from .reasoner import CategoryPriorEstimator, ConfigurationError, GTOracleEstimator, PriorTable, build_priors, write_deductions
from .scene import SceneError, ingest_csv, load_corpus, load_scene
from .server import serve
from .synthetic import write_corpus
from .tools import SamplingConfig
from .traces import TraceBuildError, build_trace, read_traces, verify_trace, write_traces

log = logging.getLogger("geoanchor")


class DataError(Exception):
    pass


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _run_config(args, **extra) -> RunConfig:
    overrides = {
        "root": getattr(args, "root", None),
        "task": getattr(args, "task", None),
        "n_points": getattr(args, "n_points", None),
        "min_depth": getattr(args, "min_depth", None),
        "seed": getattr(args, "seed", None),
        "estimator": getattr(args, "estimator", None),
        "priors": getattr(args, "priors", None),
        "category_set": getattr(args, "category_set", None),
        "factors": getattr(args, "factors", None),
        "tau": getattr(args, "tau", None),
        "out": getattr(args, "out", None),
        **extra,
    }
    return resolve_config(getattr(args, "config", None), overrides).validate()


def _sampling(cfg: RunConfig) -> SamplingConfig:
    return SamplingConfig(cfg.n_points, cfg.min_depth, cfg.seed)


def _pipeline(cfg: RunConfig, scenes, frozen: bool = False) -> PipelineConfig:
    if cfg.estimator == "category_prior":
        priors = PriorTable.from_csv(Path(cfg.priors)) if cfg.priors else build_priors(
            i for s in scenes for i in s.instances
        )
        est = CategoryPriorEstimator(priors)
    else:
        est = GTOracleEstimator()
    cats = tuple(load_category_set(Path(cfg.category_set))) if cfg.category_set else None
    return PipelineConfig(_sampling(cfg), est, frozen, cfg.tau, cats)


# -- subcommands ---------------------------------------------------------------

def cmd_ingest(args) -> int:
    frames = [f for f in args.frames.split(",") if f] if args.frames else None
    written = ingest_csv(Path(args.src), Path(args.out), frames, args.rescale)
    for p in written:
        print(p)
    return 0


def cmd_synth(args) -> int:
    for p in write_corpus(Path(args.out), args.n, args.seed):
        print(p)
    return 0


def cmd_gen_traces(args) -> int:
    cfg = _run_config(args)
    if cfg.root is None or cfg.out is None:
        raise ConfigError("gen-traces needs --root and --out")
    scfg = _sampling(cfg)
    traces, failed = [], 0
    for scene in load_corpus(Path(cfg.root)):
        targets = [[e.instance_id] for e in scene.expressions] if cfg.task == "grounding" else [None]
        seen = set()
        for tg in targets:
            if tg is not None and tg[0] in seen:
                continue
            seen.add(tg[0] if tg else None)
            try:
                tr = build_trace(scene, cfg.task, tg, scfg)
            except TraceBuildError as exc:
                log.error("%s", exc)
                failed += 1
                continue
            tr.provenance.update(cfg.provenance())
            traces.append(tr)
    n = write_traces(traces, Path(cfg.out))
    log.info("wrote %d traces to %s", n, cfg.out)
    return 1 if failed else 0


def cmd_verify_traces(args) -> int:
    scenes: dict[str, object] = {}
    reports, failing = [], []
    for tr in read_traces(Path(args.traces)):
        if tr.scene_id not in scenes:
            scenes[tr.scene_id] = load_scene(Path(args.root) / tr.scene_id)
        rep = verify_trace(tr, scenes[tr.scene_id], args.tolerance)
        reports.append(rep.to_json())
        if not rep.passed:
            failing.append((tr.scene_id, rep.failing_steps()))
            print(f"FAIL {tr.scene_id} ({tr.task}): {', '.join(rep.failing_steps())}", file=sys.stderr)
    summary = {"n_traces": len(reports), "n_passed": len(reports) - len(failing), "reports": reports}
    _emit(summary, args.out)
    return 1 if failing else 0


def cmd_serve_tools(args) -> int:
    cfg = _run_config(args)
    serve(Path(cfg.root), args.tcp, _sampling(cfg))
    return 0


def _read_predictions(path: Path) -> dict[str, list]:
    preds: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                preds[d["scene_id"]] = d["boxes"]
    return preds


def _cmd_eval(args, task: str) -> int:
    cfg = _run_config(args, task=task)
    if cfg.root is None:
        raise ConfigError("evaluation needs --root")
    scenes = load_corpus(Path(cfg.root))
    pc = _pipeline(cfg, scenes)
    if args.pred:
        preds = _read_predictions(Path(args.pred))
        if task == "detection":
            pf, gf = [], []
            for sc in scenes:
                pf.append([(b.category or "", b.box) for b in map(AnswerBox.from_json, preds.get(sc.scene_id, []))])
                gf.append([(i.category, i.box3d) for i in sc.instances])
            rep = detection_f1(pf, gf, cfg.tau, pc.category_set).to_json()
        else:
            p, g = [], []
            for sc in scenes:
                got = preds.get(sc.scene_id, [])
                for k, e in enumerate(sc.expressions):
                    g.append(sc.instance(e.instance_id).box3d)
                    entry = got[k] if k < len(got) else None
                    p.append(None if entry is None else AnswerBox.from_json(entry).box)
            acc = grounding_accuracy(p, g, cfg.tau)
            rep = {"metric": "acc@0.25", "accuracy": acc}
        result = {"source": str(args.pred), "report": rep}
    else:
        res = evaluate_corpus(scenes, task, pc)
        result = {"source": "pipeline", "report": res}
        if args.deductions:
            from .evaluation import predict_detection, predict_grounding

            Path(args.deductions).write_text("", encoding="utf-8")
            for sc in scenes:
                recs = predict_detection(sc, pc)[1] if task == "detection" else predict_grounding(sc, pc)[2]
                write_deductions(recs, Path(args.deductions), sc.scene_id)
    _emit({"provenance": cfg.provenance(), "task": task, **result}, cfg.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    if cfg.root is None:
        raise ConfigError("sweep needs --root")
    scenes = load_corpus(Path(cfg.root))
    rep = rescale_sweep(scenes, cfg.task, _pipeline(cfg, scenes, args.frozen_intrinsics), cfg.factors)
    _emit({"provenance": cfg.provenance(), **rep.to_json()}, cfg.out)
    if args.table:
        Path(args.table).write_text(rep.table(), encoding="utf-8")
    else:
        sys.stderr.write(rep.table())
    return 0


def _box_arg(text: str) -> Box3D:
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
        return Box3D.from_list(vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 9 numbers x,y,z,l,w,h,yaw,pitch,roll: {exc}") from None


def cmd_iou(args) -> int:
    r = iou_3d(args.a, args.b, yaw_only=args.yaw_only)
    out = {"iou": r.iou, "intersection_volume": r.intersection_volume, "union_volume": r.union_volume}
    if args.mc:
        a, b = (args.a.yaw_only(), args.b.yaw_only()) if args.yaw_only else (args.a, args.b)
        m = iou_3d_mc_oracle(a, b, args.mc, args.seed or 0)
        out["mc"] = {"iou": m.iou, "n_samples": args.mc, "seed": args.seed or 0}
    _emit(out, None)
    return 0


# -- parser -------------------------------------------------------------------

def _task(text: str) -> str:
    aliases = {"detect": "detection", "detection": "detection", "ground": "grounding", "grounding": "grounding"}
    if text not in aliases:
        raise argparse.ArgumentTypeError("task must be detect or ground")
    return aliases[text]


def _common(p: argparse.ArgumentParser, task: bool = True) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--root", help="directory of scene bundles")
    if task:
        p.add_argument("--task", type=_task, help="detect or ground")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-points", type=int)
    p.add_argument("--min-depth", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geoanchor", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="convert the CSV + .npy layout into scene bundles")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", help="comma-separated scene ids to ingest")
    p.add_argument("--rescale", type=float, default=1.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic fixture corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-traces", help="build reasoning traces as JSONL")
    _common(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("verify-traces", help="re-derive every step of a trace corpus")
    p.add_argument("--root", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--tolerance", type=float, default=0.0, help="in last-displayed-digit units")
    p.add_argument("--task", type=_task, help="accepted for symmetry; traces carry their task")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_traces)

    p = sub.add_parser("serve-tools", help="serve the spatial tools over stdio or TCP")
    _common(p, task=False)
    p.add_argument("--tcp", help="host:port to listen on instead of stdio")
    p.set_defaults(func=cmd_serve_tools)

    for name, task in (("eval-detect", "detection"), ("eval-ground", "grounding")):
        p = sub.add_parser(name, help=f"score {task} predictions (or the oracle pipeline)")
        _common(p, task=False)
        p.add_argument("--pred", help="JSONL of {scene_id, boxes}; default runs the pipeline")
        p.add_argument("--estimator", choices=("gt_oracle", "category_prior"))
        p.add_argument("--priors")
        p.add_argument("--category-set")
        p.add_argument("--tau", type=float)
        p.add_argument("--deductions", help="write per-target deduction records as JSONL")
        p.add_argument("--out")
        p.set_defaults(func=lambda a, t=task: _cmd_eval(a, t))

    p = sub.add_parser("sweep", help="metric across camera rescale factors")
    _common(p)
    p.add_argument("--estimator", choices=("gt_oracle", "category_prior"))
    p.add_argument("--priors")
    p.add_argument("--category-set")
    p.add_argument("--tau", type=float)
    p.add_argument("--factors", help="comma-separated factors (default 0.5..1.5 step 0.1)")
    p.add_argument("--frozen-intrinsics", action="store_true", help="ablation: camera tool ignores the rescale")
    p.add_argument("--table", help="write the plain-text table here instead of stderr")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("iou", help="oriented 3D IoU of two boxes")
    p.add_argument("--a", type=_box_arg, required=True)
    p.add_argument("--b", type=_box_arg, required=True)
    p.add_argument("--mc", type=int, help="also report a Monte-Carlo estimate with this many samples")
    p.add_argument("--seed", type=int)
    p.add_argument("--yaw-only", action="store_true")
    p.set_defaults(func=cmd_iou)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, SceneError, DomainError, TraceBuildError, DataError,
            OSError, ValueError, KeyError) as exc:
        print(f"geoanchor: error: {exc}", file=sys.stderr)
        return 1


def dispatch(argv: list[str]) -> int:
    """Like :func:`main` but returns usage errors as exit code 2 instead of raising."""
    try:
        return main(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
