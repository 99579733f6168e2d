"""Train and evaluate domain-routed adapters on the synthetic VQA suite.

Every verb builds missing upstream artifacts on demand unless ``--no-build``
is given, in which case it fails with the command that would build them.
Errors go to stderr as one JSON object and the exit code is nonzero.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace

from catchvqa import domains as D
from catchvqa import harness as H
from catchvqa.errors import CatchError, ConfigError, MissingArtifactError

EXIT_ERROR = 1
EXIT_MISSING = 3


def _layers(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with ExperimentConfig fields")
    common.add_argument("--out", help=f"output root (default: ${H.OUTPUT_ENV} or ./runs)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--manifest", help="dataset manifest to use instead of generating one")
    common.add_argument("--layers", type=_layers, help="adapter injection layers, e.g. 4,8")
    common.add_argument("--prefix-len", type=int)
    common.add_argument("--temperature", type=float)
    common.add_argument("--no-build", action="store_true", help="fail instead of training missing artifacts")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="catchvqa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset and its manifest")
    sub.add_parser("pretrain", parents=[common], help="pretrain and freeze the backbone")
    sub.add_parser("train-classifier", parents=[common], help="train the domain classifier")
    ta = sub.add_parser("train-adapters", parents=[common], help="train one or all domains' adapter pairs")
    ta.add_argument("--domain", default="all", choices=[d.name for d in D.BUILTIN] + ["all"])
    ev = sub.add_parser("eval", parents=[common], help="frozen baseline vs routed adapters")
    ev.add_argument("--policy", default="hard", choices=["hard", "soft", "random", "oracle", "fixed"])
    sub.add_parser("main", parents=[common], help="same as eval --policy hard")
    sub.add_parser("ablate", parents=[common], help="ablation table")
    sub.add_parser("crossdomain", parents=[common], help="leave-one-domain-out table")
    sub.add_parser("routing", parents=[common], help="routing strategy table")
    sw = sub.add_parser("sweep", parents=[common], help="injection-layer or prefix-length sweep")
    sw.add_argument("--what", required=True, choices=["layers", "prefix"])
    sub.add_parser("report", parents=[common], help="print every text report under the output root")
    sub.add_parser("sites", parents=[common], help="list the backbone's hook sites")
    return p


EXPERIMENT_OF = {"eval": "main", "main": "main", "ablate": "ablation", "crossdomain": "crossdomain", "routing": "routing"}


def make_config(args):
    overrides = {
        "output_dir": args.out or H.default_output_dir(),
        "seed": args.seed,
        "manifest": args.manifest,
        "layers": args.layers,
        "prefix_len": args.prefix_len,
        "temperature": args.temperature,
    }
    if args.verb in EXPERIMENT_OF:
        overrides["experiment"] = EXPERIMENT_OF[args.verb]
    elif args.verb == "sweep":
        overrides["experiment"] = f"{args.what}_sweep"
    if args.verb == "eval":
        overrides["policy"] = args.policy
    if args.config:
        # an explicit --out beats the file, the file beats the environment default
        if args.out is None:
            del overrides["output_dir"]
        cfg = H.ExperimentConfig.from_json(args.config, **overrides)
        if args.out is None and "output_dir" not in _read_json(args.config):
            cfg = replace(cfg, output_dir=H.default_output_dir())
        return cfg
    return H.ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def run(args):
    cfg = make_config(args)
    build = not args.no_build
    if args.verb == "report":
        print(H.summarize_reports(cfg.output_dir))
        return
    suffix = f" --config {args.config}" if args.config else ""
    if args.seed is not None:
        suffix += f" --seed {args.seed}"
    ws = H.Workspace(cfg, build=build, command_suffix=suffix)
    if args.verb == "gen-data":
        ws.generate_data()
        print(ws.data_dir / "manifest.json")
    elif args.verb == "pretrain":
        ws.pretrain()
        print(ws.backbone_dir() / "backbone.ckpt")
    elif args.verb == "train-classifier":
        ws.train_classifier()
        print(ws.classifier_path())
    elif args.verb == "train-adapters":
        doms = D.BUILTIN if args.domain == "all" else [D.lookup(args.domain)]
        done = []
        for d in doms:
            ws.train_adapters(d, others=tuple(done))
            done.append(ws.adapter(d))
        if args.domain == "all":
            ws.write_registry_manifest()
        print(ws.adapter_dir(cfg.adapter_config()))
    elif args.verb == "sites":
        print(ws.backbone().hooks.dump())
    else:
        name = cfg.experiment if args.verb != "eval" or cfg.policy == "hard" else f"eval_{cfg.policy}"
        payload = H.RUNNERS[cfg.experiment](ws)
        json_path, txt_path = H.emit_report(ws, name, payload)
        print(txt_path.read_text(), end="")
        print(json_path)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run(args)
    except MissingArtifactError as exc:
        json.dump({"error": "missing_artifact", "artifact": exc.artifact, "command": exc.command, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_MISSING
    except (CatchError, OSError) as exc:
        kind = "config" if isinstance(exc, ConfigError) else type(exc).__name__
        json.dump({"error": kind, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
