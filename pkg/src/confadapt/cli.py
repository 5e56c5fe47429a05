"""Command-line driver: ``confadapt <subcommand> [--config F] [--out D] [--seed N] [--set k=v]``.

Configuration is flat ``key = value`` text; ``--set`` and ``--seed`` override
the file. Every run writes ``manifest.txt`` to the output directory holding
the resolved configuration, so ``confadapt <cmd> --config out/manifest.txt``
replays it. Exit status: 0 success, 1 invalid configuration, 2 runtime error.
"""
from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, adapt, autodiff as ad, confidence, formats, losses, metrics, stereo, synth
from .errors import ArgumentError
from .model import TinyDispNet

COMMANDS = ("synth", "stereo", "confidence", "gen-labels", "pretrain", "adapt", "eval", "gradcheck")


class ConfigError(ArgumentError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if str(text).strip() in ("", "none", "preset") else float(text)


# key -> (parser, default, choices)
SCHEMA = {
    "seed": (int, 0, None),
    "input_dir": (str, None, None),
    "domain": (str, "A", ("A", "B")),
    "count": (int, 10, None),
    "height": (int, 64, None),
    "width": (int, 128, None),
    "algo": (str, None, ("AD", "SGM", "AD+SGM")),
    "d_max": (int, 24, None),
    "estimator": (str, "confnet", ("lrc", "confnet")),
    "confnet": (str, "", None),
    "train": (_bool, False, None),
    "mode": (str, "stereo", ("stereo", "mono")),
    "model": (str, None, None),
    "baseline": (str, "", None),
    "variant": (str, "complete", ("regression", "weighted", "masked", "complete", "learned", "taunet")),
    "tau": (_opt_float, None, None),
    "lambda_smooth": (_opt_float, None, None),
    "lambda_recon": (_opt_float, None, None),
    "alpha": (float, 0.85, None),
    "gate_k": (float, 50.0, None),
    "tau_init": (float, 0.99, None),
    "epochs": (int, None, None),
    "lr": (float, 1e-3, None),
    "tau_lr": (float, 1e-2, None),
    "crop": (int, 0, None),
    "region": (str, "all", ("all", "noc")),
    "eps": (float, 1e-3, None),
    "tol": (float, 1e-4, None),
}

# subcommand -> (required keys, optional keys)
COMMAND_KEYS = {
    "synth": ((), ("seed", "domain", "count", "height", "width")),
    "stereo": (("input_dir", "algo"), ("seed", "d_max")),
    "confidence": (("input_dir", "algo"), ("seed", "estimator", "confnet", "train", "d_max",
                                           "epochs", "lr")),
    "gen-labels": (("input_dir", "algo"), ("seed", "estimator", "confnet", "d_max")),
    "pretrain": (("input_dir",), ("seed", "mode", "d_max", "epochs", "lr")),
    "adapt": (("input_dir", "model", "algo"), ("seed", "variant", "tau", "lambda_smooth",
                                               "lambda_recon", "alpha", "gate_k", "tau_init",
                                               "epochs", "lr", "tau_lr")),
    "eval": (("input_dir", "model"), ("seed", "baseline", "crop", "region")),
    "gradcheck": ((), ("seed", "eps", "tol")),
}
DEFAULT_EPOCHS = {"pretrain": 20, "adapt": 5, "confidence": confidence.DEFAULT_EPOCHS}
PATH_KEYS = ("input_dir", "model", "baseline")


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    entries = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries[key] = value
    return entries


def resolve(command, raw, base_dir=None):
    """Validate raw string entries against the schema for ``command``."""
    required, optional = COMMAND_KEYS[command]
    allowed = set(required) | set(optional)
    raw = dict(raw)
    recorded = raw.pop("command", command)
    if recorded != command:
        raise ConfigError(f"config was written for '{recorded}', not '{command}'")
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}' for {command}")
    for key in required:
        if str(raw.get(key, "")).strip() == "":
            raise ConfigError(f"missing required key '{key}' for {command}")
    cfg = {}
    for key in sorted(allowed):
        parse, default, choices = SCHEMA[key]
        if key in raw:
            try:
                value = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}': {raw[key]!r}") from exc
        else:
            value = default
        if key == "algo" and value is not None:
            value = value.upper()
        if key == "epochs" and value is None:
            value = DEFAULT_EPOCHS.get(command, 5)
        if choices is not None and value is not None and value not in choices:
            raise ConfigError(f"'{key}' must be one of {', '.join(choices)}; got {value!r}")
        if key in PATH_KEYS and value:
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            value = str(p.resolve())
        if key == "confnet" and value:
            value = ",".join(str(Path(v.strip()).resolve()) for v in value.split(",") if v.strip())
        cfg[key] = value
    if "epochs" in cfg and cfg["epochs"] < 1:
        raise ConfigError("'epochs' must be >= 1")
    if "count" in cfg and cfg["count"] < 1:
        raise ConfigError("'count' must be >= 1")
    return cfg


def write_manifest(out, command, cfg):
    lines = [f"# confadapt {__version__} run manifest", f"command = {command}"]
    lines += [f"{k} = {'' if v is None else v}" for k, v in sorted(cfg.items())]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------ helpers

def scene_names(directory):
    names = sorted(p.name[: -len("_left.png")] for p in Path(directory).glob("*_left.png"))
    if not names:
        raise FileNotFoundError(f"no '*_left.png' images in {directory}")
    return names


def _pair(directory, name):
    d = Path(directory)
    return formats.read_image(d / f"{name}_left.png"), formats.read_image(d / f"{name}_right.png")


def _gt(directory, name):
    return formats.read_disparity(Path(directory) / f"{name}_gt.pfm", "pfm")


def _estimators(cfg, algos):
    if cfg["estimator"] == "lrc":
        return confidence.LRCConfidence()
    paths = [p.strip() for p in cfg["confnet"].split(",") if p.strip()]
    if len(paths) != len(algos):
        raise ConfigError(f"'confnet' needs one checkpoint per algorithm in {'+'.join(algos)}")
    return {a: confidence.ConfNet.load(p) for a, p in zip(algos, paths)}


def _load_model(path):
    return TinyDispNet.load(path)


def _loss_config(cfg, target):
    lc = losses.LossConfig.preset(target, cfg["algo"], cfg["variant"])
    over = {k: cfg[k] for k in ("tau", "lambda_smooth", "lambda_recon") if cfg[k] is not None}
    over.update(alpha=cfg["alpha"], gate_k=cfg["gate_k"], tau_init=cfg["tau_init"])
    return replace(lc, **over)


# -------------------------------------------------------------- subcommands

def cmd_synth(cfg, out):
    for i in range(cfg["count"]):
        spec = synth.SceneSpec.for_domain(cfg["domain"], cfg["seed"] + i,
                                          height=cfg["height"], width=cfg["width"])
        synth.save_scene(synth.generate(spec), out, f"{cfg['domain']}{i:04d}")
    return f"wrote {cfg['count']} domain-{cfg['domain']} scenes"


def cmd_stereo(cfg, out):
    names = scene_names(cfg["input_dir"])
    for name in names:
        left, right = _pair(cfg["input_dir"], name)
        d_l, d_r = stereo.match_stereo(left, right, cfg["algo"], d_max=cfg["d_max"],
                                       return_right=True)
        formats.write_disparity(d_l, out / f"{name}_disp.pfm", "pfm")
        formats.write_disparity(d_r, out / f"{name}_disp_right.pfm", "pfm")
    return f"matched {len(names)} pairs with {cfg['algo']}"


def cmd_confidence(cfg, out):
    names = scene_names(cfg["input_dir"])
    algos = cfg["algo"].split("+")
    if cfg["train"]:
        if cfg["estimator"] != "confnet" or len(algos) != 1:
            raise ConfigError("training needs estimator = confnet and a single algo")
        data = []
        for name in names:
            left, right = _pair(cfg["input_dir"], name)
            data.append((stereo.match_stereo(left, right, algos[0], d_max=cfg["d_max"]),
                         _gt(cfg["input_dir"], name)))
        log = []
        net = confidence.confnet_train(data, epochs=cfg["epochs"], lr=cfg["lr"],
                                       seed=cfg["seed"], d_max=cfg["d_max"], log=log)
        net.save(out / "confnet.ckpt")
        (out / "confnet_log.csv").write_text(
            "epoch,bce\n" + "".join(f"{i},{v:.9g}\n" for i, v in enumerate(log)))
        return f"trained ConfNet on {len(names)} maps, final BCE {log[-1]:.4f}"
    est = _estimators(cfg, algos)
    for name in names:
        left, right = _pair(cfg["input_dir"], name)
        for a in algos:
            d_l, d_r = stereo.match_stereo(left, right, a, d_max=cfg["d_max"], return_right=True)
            e = est[a] if isinstance(est, dict) else est
            formats.write_confidence(e(d_l, d_r), out / f"{name}_{a.lower()}_conf.pfm")
    return f"wrote confidence for {len(names)} pairs"


def cmd_gen_labels(cfg, out):
    names = scene_names(cfg["input_dir"])
    est = _estimators(cfg, cfg["algo"].split("+"))
    src = Path(cfg["input_dir"])
    for name in names:
        left, right = _pair(src, name)
        s = adapt.generate_sample(left, right, cfg["algo"], est, d_max=cfg["d_max"])
        for side in ("left", "right"):
            shutil.copyfile(src / f"{name}_{side}.png", out / f"{name}_{side}.png")
        formats.write_disparity(s.labels, out / f"{name}_labels.pfm", "pfm")
        formats.write_confidence(s.conf, out / f"{name}_conf.pfm")
    return f"wrote {len(names)} adaptation samples"


def cmd_pretrain(cfg, out):
    names = scene_names(cfg["input_dir"])
    scenes = []
    for name in names:
        left, right = _pair(cfg["input_dir"], name)
        gt = _gt(cfg["input_dir"], name)
        scenes.append(synth.Scene(left, right, gt, np.zeros(gt.shape, bool), gt))
    net = TinyDispNet(mode=cfg["mode"], d_max=cfg["d_max"], seed=cfg["seed"])
    net, history = adapt.pretrain(net, scenes, epochs=cfg["epochs"], lr=cfg["lr"],
                                  seed=cfg["seed"])
    net.save(out / "model.ckpt")
    (out / "pretrain_log.csv").write_text(
        "epoch,l1\n" + "".join(f"{i},{v:.9g}\n" for i, v in enumerate(history)))
    return f"pre-trained on {len(names)} scenes, final L1 {history[-1]:.4f}"


def cmd_adapt(cfg, out):
    names = scene_names(cfg["input_dir"])
    src = Path(cfg["input_dir"])
    samples = []
    for name in names:
        left, right = _pair(src, name)
        samples.append(adapt.AdaptationSample(
            left, right, formats.read_disparity(src / f"{name}_labels.pfm", "pfm"),
            formats.read_confidence(src / f"{name}_conf.pfm")))
    net = _load_model(cfg["model"])
    acfg = adapt.AdaptConfig(algo=cfg["algo"], loss=_loss_config(cfg, net.mode),
                             epochs=cfg["epochs"], lr=cfg["lr"], tau_lr=cfg["tau_lr"],
                             seed=cfg["seed"])
    net, log = adapt.adapt_model(net, samples, acfg)
    if hasattr(net, "taunet"):
        net.taunet.save(out / "taunet.ckpt")
        del net.taunet
    net.save(out / "model.ckpt")
    adapt.write_log_csv(log, out / "adapt_log.csv")
    return f"adapted on {len(names)} samples ({len(log)} steps), final tau {log[-1]['tau']:.4f}"


def _evaluate(net, cfg, names):
    reports = []
    for name in names:
        left, right = _pair(cfg["input_dir"], name)
        gt = _gt(cfg["input_dir"], name)
        mask = np.ones(gt.shape, bool)
        c = cfg["crop"]
        if c:
            mask[:c] = mask[-c:] = False
            mask[:, :c] = mask[:, -c:] = False
        occ_path = Path(cfg["input_dir"]) / f"{name}_occ.pgm"
        if cfg["region"] == "noc" and occ_path.exists():
            mask &= ~formats.read_mask(occ_path)
        pred = net.predict(left, right if net.mode == "stereo" else None)
        reports.append((name, metrics.stereo_metrics(pred, gt, mask=mask)))
    return reports


def cmd_eval(cfg, out):
    names = scene_names(cfg["input_dir"])
    agg = metrics.write_metrics_csv(out / "eval.csv", _evaluate(_load_model(cfg["model"]), cfg, names))
    lines = [f"model_bad3 = {agg['bad3']:.6f}", f"model_mae = {agg['mae']:.6f}"]
    if cfg["baseline"]:
        base = metrics.write_metrics_csv(out / "eval_baseline.csv",
                                         _evaluate(_load_model(cfg["baseline"]), cfg, names))
        lines += [f"baseline_bad3 = {base['bad3']:.6f}", f"baseline_mae = {base['mae']:.6f}"]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    return "; ".join(lines)


def gradcheck_suite(seed=0, eps=1e-3, tol=1e-4):
    """Finite-difference checks of every differentiable component on small inputs."""
    rng = np.random.default_rng(seed)
    h, w = 8, 16
    img_l = rng.uniform(0.1, 0.9, (h, w))
    img_r = rng.uniform(0.1, 0.9, (h, w))
    labels = rng.uniform(0, 6, (h, w))
    labels[0, :3] = formats.INVALID
    conf = rng.uniform(0, 1, (h, w))
    checks = []

    def leaf(shape, lo=0.5, hi=5.0, name="pred"):
        return ad.Tensor(rng.uniform(lo, hi, shape), requires_grad=True, name=name)

    p = leaf((h, w))
    checks.append(("L_c hard", lambda: losses.confidence_guided_loss(p, labels, conf, 0.5), [p]))
    p2, t = leaf((h, w)), ad.Tensor(np.array(0.3), requires_grad=True, name="tau_logit")
    checks.append(("L_c soft", lambda: losses.learnable_tau_loss(p2, labels, conf, ad.sigmoid(t), 50.0),
                   [p2, t]))
    p3 = leaf((h, w))
    checks.append(("L_s", lambda: losses.smoothness_loss(p3, img_l), [p3]))
    p4 = leaf((h, w), 0.3, 4.0)
    checks.append(("L_r", lambda: losses.reconstruction_loss(img_l, img_r, p4), [p4]))
    net = TinyDispNet(d_max=8, seed=seed)
    checks.append(("TinyDispNet", lambda: ad.mean(ad.mul(net.forward(img_l, img_r), labels[None])),
                   net.params))
    cn = confidence.ConfNet(d_max=8, seed=seed)
    gt = np.where(rng.random((h, w)) < 0.5, labels, labels + 4.0)
    checks.append(("ConfNet", lambda: confidence.confnet_loss(cn, labels, gt), cn.params))
    tn = losses.TauNet(width=8, seed=seed)
    checks.append(("TauNet", lambda: ad.mul(tn(img_l), 1.0), tn.params))

    lines, ok = [], True
    for name, f, params in checks:
        if isinstance(params, dict):
            params = dict((f"{name}:{k}", v) for k, v in params.items())
        rep = ad.grad_check(f, params, eps=eps, tol=tol, max_entries=24, seed=seed)
        ok &= rep.passed
        lines.append(f"{name}: max_rel_error={rep.max_rel_error:.3e} {'ok' if rep.passed else 'FAIL'}")
    return ok, lines


def cmd_gradcheck(cfg, out):
    ok, lines = gradcheck_suite(cfg["seed"], cfg["eps"], cfg["tol"])
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    if not ok:
        raise RuntimeError("gradient check failed: " + "; ".join(l for l in lines if "FAIL" in l))
    return f"all {len(lines)} gradient checks below {cfg['tol']:g}"


HANDLERS = {"synth": cmd_synth, "stereo": cmd_stereo, "confidence": cmd_confidence,
            "gen-labels": cmd_gen_labels, "pretrain": cmd_pretrain, "adapt": cmd_adapt,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="confadapt", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value file")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return parser


def run(argv=None):
    """Parse, validate and execute; returns the exit status."""
    try:
        args = build_parser().parse_args(argv)
        raw = {}
        if args.config:
            raw = read_config(args.config)
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        cfg = resolve(args.command, raw)
    except ConfigError as exc:
        print(f"confadapt: config error: {exc}", file=sys.stderr)
        return 1
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args.command, cfg)
        message = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"confadapt: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit status
        print(f"confadapt: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"confadapt {args.command}: {message}")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
