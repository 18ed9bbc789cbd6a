#!/usr/bin/env python3
"""
lifesim.py — Command-line entry point.

    simdesk serve      --scene <name|file> --port <n>
    agent run          --scenario <file> --connect <host:port> --profile <dir> --seed <n>
    agent record       --connect <host:port> --out <dir> [--listen <port>] [--duration <s>]
    vision analyze     --image <file> --profile <dir> --out <file>
    canvas generate    --graph <file> --from <iso> --to <iso> --seed <n> --out <file>
    text generate      --context <file> --n <k> --provider builtin|remote --seed <n>
    orchestrate run    --canvas <file> --graph <file> --accel <factor>

Reports are JSON on stdout; summaries and the defaulted seed go to stderr.
Exit status: 0 success, 1 domain error (error: <code>: <message>), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np

import agent_actions
import recorder
import scenario_canvas
import scenario_graph
import scenario_orchestrator
import simdesk
import textgen
import vision
from agent_profile import load_profile
from desk_types import load_image
from lifesim_config import lifesim_cfg
from lifesim_errors import LifeSimError, ParseError
from rfb_channel import Endpoint, connect
from rfb_server import RFBServer
from textgen_provider import RemoteProvider

logger = logging.getLogger("lifesim.cli")

LOG_FORMAT = "%(asctime)s [lifesim] %(levelname)s — %(message)s"


# ─── Helpers ──────────────────────────────────────────────────────────────────

def _seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        args.seed = time.time_ns() % (2 ** 31)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _emit(report: dict, out: Optional[str] = None) -> None:
    text = json.dumps(report, indent=2, ensure_ascii=False) + "\n"
    if out:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _wait_for_stop(duration: float) -> None:
    """Block for `duration` seconds, or until Ctrl-C / SIGTERM when duration is 0."""
    stop = threading.Event()
    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait(duration if duration > 0 else None)
    except KeyboardInterrupt:
        pass


def _session(endpoint: str):
    return connect(Endpoint.parse(endpoint), lifesim_cfg.connect_timeout, lifesim_cfg.io_timeout)


# ─── simdesk ──────────────────────────────────────────────────────────────────

def cmd_simdesk_serve(args: argparse.Namespace) -> int:
    scene = simdesk.load_scene(args.scene)
    with simdesk.serve(scene, port=args.port, host=args.host) as handle:
        print(f"simdesk serving {args.scene} ({scene.width}×{scene.height}) on "
              f"{args.host}:{handle.port}", file=sys.stderr, flush=True)
        port = handle.port
        _wait_for_stop(args.duration)
        counts = handle.message_counts
    _emit({"scene": str(args.scene), "port": port, "message_counts": dict(counts)})
    return 0


# ─── agent ────────────────────────────────────────────────────────────────────

def cmd_agent_run(args: argparse.Namespace) -> int:
    seed = _seed(args)
    script = agent_actions.load_script(args.scenario)
    profile = load_profile(args.profile, lifesim_cfg.path_for("profiles", "profiles"))
    with _session(args.connect) as session:
        reports = agent_actions.run_script(session, script, profile, lifesim_cfg.humanizer,
                                           lifesim_cfg.budget, np.random.default_rng(seed))
    ok = len(reports) == len(script) and all(r.outcome.ok or r.action.best_effort for r in reports)
    _emit({
        "header": {"scenario": args.scenario, "connect": args.connect,
                   "profile": profile.name, "seed": seed},
        "ok": ok,
        "actions": [r.as_dict() for r in reports],
    })
    for r in reports:
        print(f"  {r.action.describe():<40} {r.outcome}", file=sys.stderr)
    return 0 if ok else 1


def cmd_agent_record(args: argparse.Namespace) -> int:
    policy = lifesim_cfg.recorder
    out = Path(args.out)
    with _session(args.connect) as session:
        tap = recorder.RecordingTap(session, policy).start()
        try:
            if args.listen is not None:
                with RFBServer(recorder.RecordingProxy(tap), port=args.listen,
                               name="lifesim-recorder") as proxy:
                    print(f"recording proxy on 127.0.0.1:{proxy.port}; connect a VNC viewer "
                          f"and press Ctrl-C when done", file=sys.stderr, flush=True)
                    _wait_for_stop(args.duration)
            else:
                _wait_for_stop(args.duration)
        finally:
            tap.stop()
        rec = tap.recording()
    recorder.save_recording(rec, out)
    report: dict = {"out": str(out), "events": len(rec.events), "keyframes": len(rec.keyframes)}
    if rec.events:
        segments = recorder.extract_targets(rec, recorder.segment(rec, policy=policy), policy)
        recorder.build_replay(segments, out / "replay")
        report["segments"] = [s.as_dict() for s in segments]
    _emit(report)
    return 0


# ─── vision ───────────────────────────────────────────────────────────────────

def cmd_vision_analyze(args: argparse.Namespace) -> int:
    frame = load_image(args.image)
    classifier, rules, params, link_colour = None, lifesim_cfg.geometry, lifesim_cfg.vision, None
    if args.profile:
        profile = load_profile(args.profile, lifesim_cfg.path_for("profiles", "profiles"))
        classifier, rules, params, link_colour = (profile.classifier, profile.rules,
                                                  profile.params, profile.link_colour)
    started = time.monotonic()
    report = vision.analyze_frame(frame, classifier, rules, link_colour, params)
    report["image"] = str(args.image)
    if args.mask:
        mask = vision.adaptive_threshold(vision.to_gray(frame), params.radius, params.offset)
        vision.save_mask_pbm(mask, args.mask)
        report["mask"] = str(args.mask)
    _emit(report, args.out)
    print(f"{len(report['zones'])} zones in {(time.monotonic() - started) * 1000:.0f} ms",
          file=sys.stderr)
    return 0


# ─── canvas / text / orchestrate ──────────────────────────────────────────────

def _iso(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date-time: {text!r}") from None


def cmd_canvas_generate(args: argparse.Namespace) -> int:
    seed = _seed(args)
    graph = scenario_graph.load_graph(args.graph)
    canvas = scenario_canvas.generate_canvas(graph, args.start, args.end, lifesim_cfg.canvas, seed)
    scenario_canvas.dump_canvas(canvas, args.out)
    print(f"{len(canvas.interactions)} interactions → {args.out}", file=sys.stderr)
    return 0


def _builtin_model() -> textgen.MarkovModel:
    return textgen.train(textgen.load_corpus(lifesim_cfg.resolve(lifesim_cfg.textgen.corpus)))


def _text_source(provider: str):
    params = lifesim_cfg.textgen
    if provider == "remote":
        return RemoteProvider(params.remote_url, params.timeout_s)
    return _builtin_model()


def cmd_text_generate(args: argparse.Namespace) -> int:
    seed = _seed(args)
    try:
        ctx = textgen.TextContext.model_validate_json(Path(args.context).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"{args.context}: {exc}", path=args.context) from exc
    except ValueError as exc:
        raise ParseError(f"{args.context}: {exc}", path=args.context) from exc
    params = lifesim_cfg.textgen
    cands = textgen.generate(_text_source(args.provider), ctx, args.n, params.max_words, seed)
    ranked = textgen.score_candidates(cands, ctx, params.length_norm)
    _emit({"context": ctx.model_dump(mode="json", exclude_none=True), "seed": seed,
           "provider": args.provider, "subject": textgen.subject_line(ctx),
           "candidates": [c.as_dict() for c in ranked]})
    return 0


def cmd_orchestrate_run(args: argparse.Namespace) -> int:
    seed = _seed(args)
    graph = scenario_graph.load_graph(args.graph)
    canvas = scenario_canvas.load_canvas(args.canvas)
    profiles_dir = lifesim_cfg.path_for("profiles", "profiles")
    by_name = {av.profile: load_profile(av.profile, profiles_dir)
               for av in graph.avatars.values() if av.profile}
    params = lifesim_cfg.textgen
    generator = None
    if args.bodies != "none":
        generator = textgen.body_generator(_text_source(args.bodies), params.candidates,
                                           params.max_words, params.length_norm)
    compiled = scenario_canvas.compile_canvas(canvas, graph, by_name, generator,
                                              lifesim_cfg.canvas, seed)
    if args.dump:
        compiled.dump(args.dump)

    sessions, unreachable = {}, []
    try:
        for av in graph.avatars.values():
            try:
                sessions[av.id] = _session(av.endpoint)
            except (LifeSimError, OSError) as exc:
                logger.warning("avatar %s: desk %s unreachable: %s", av.id, av.endpoint, exc)
                unreachable.append(av.id)
        executor = scenario_orchestrator.session_executor(
            sessions, {a: by_name[graph.avatar(a).profile] for a in sessions},
            lifesim_cfg.humanizer, lifesim_cfg.budget, seed, unavailable=unreachable)
        report = scenario_orchestrator.orchestrate(
            compiled, executor, scenario_orchestrator.WallClock(args.accel))
    finally:
        for s in sessions.values():
            s.close()
    _emit({"header": {"canvas": args.canvas, "graph": args.graph, "accel": args.accel,
                      "seed": seed, "unreachable": unreachable}, **report.as_dict()})
    print(f"orchestration: {report.counts} in {report.wall_s:.1f}s", file=sys.stderr)
    return 0 if report.ok else 1


# ─── Parser ───────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifesim", description="Simulated desktop users")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    groups = parser.add_subparsers(dest="group", required=True)

    sd = groups.add_parser("simdesk", help="simulated desktop").add_subparsers(dest="cmd", required=True)
    p = sd.add_parser("serve", help="serve a scene over RFB")
    p.add_argument("--scene", required=True, help="scene name (scenes/<name>.json) or file")
    p.add_argument("--port", type=int, default=5901)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--duration", type=float, default=0.0, help="seconds; 0 serves until Ctrl-C")
    p.set_defaults(func=cmd_simdesk_serve)

    ag = groups.add_parser("agent", help="run or record an agent").add_subparsers(dest="cmd", required=True)
    p = ag.add_parser("run", help="run a script of unit actions")
    p.add_argument("--scenario", required=True, help="script file (JSON list of actions)")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--profile", required=True, help="profile name or directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_agent_run)
    p = ag.add_parser("record", help="record a demonstration")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--listen", type=int, help="serve a recording proxy on this port")
    p.add_argument("--duration", type=float, default=0.0, help="seconds; 0 records until Ctrl-C")
    p.set_defaults(func=cmd_agent_record)

    vi = groups.add_parser("vision", help="screen analysis").add_subparsers(dest="cmd", required=True)
    p = vi.add_parser("analyze", help="detect zones in an image")
    p.add_argument("--image", required=True)
    p.add_argument("--profile", help="profile name or directory (classifier, rules)")
    p.add_argument("--out", required=True)
    p.add_argument("--mask", help="also write the threshold mask as PBM")
    p.set_defaults(func=cmd_vision_analyze)

    cv = groups.add_parser("canvas", help="scenario canvases").add_subparsers(dest="cmd", required=True)
    p = cv.add_parser("generate", help="generate a canvas from an avatar graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--from", dest="start", required=True, type=_iso)
    p.add_argument("--to", dest="end", required=True, type=_iso)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_canvas_generate)

    tx = groups.add_parser("text", help="conditional text").add_subparsers(dest="cmd", required=True)
    p = tx.add_parser("generate", help="generate candidate texts for a context")
    p.add_argument("--context", required=True, help="JSON TextContext file")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--provider", choices=("builtin", "remote"), default="builtin")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_text_generate)

    orc = groups.add_parser("orchestrate", help="multi-agent runs").add_subparsers(dest="cmd", required=True)
    p = orc.add_parser("run", help="compile a canvas and run it on the avatars' machines")
    p.add_argument("--canvas", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--accel", type=float, default=1.0)
    p.add_argument("--bodies", choices=("builtin", "remote", "none"), default="builtin",
                   help="where mail bodies missing from the canvas come from")
    p.add_argument("--dump", help="also write the compiled per-agent scripts here")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_orchestrate_run)
    return parser


def dispatch(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    level = logging.DEBUG if args.verbose else getattr(logging, lifesim_cfg.log_level, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    try:
        return args.func(args)
    except LifeSimError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        logger.debug("detail: %s", exc.as_dict())
        return 1


def main() -> int:
    return dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
