"""Command-line entry point: ``rsslvs <command> --config C --seed S --out DIR``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__, lrt, neural
from .adversary import AttackConstraints, attack_rows, generate_optimized_dataset
from .channel import draw_observations, fit_gamma, read_fit_csv
from .errors import ConfigError, InfeasibleError
from .harness import OPTIMIZED, ExperimentConfig, learning_curve, run_comparison, split_indices
from .scenario import as_arrays, dataset_from_csv, dataset_to_csv, generate_dataset

EXIT_ERROR, EXIT_CONFIG, EXIT_INFEASIBLE = 1, 2, 3


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_config(path: str | None, seed: int | None) -> ExperimentConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError("<root>", f"cannot read config ({exc.strerror})") from None
    cfg = ExperimentConfig.from_dict(raw)
    return cfg.with_seed(seed) if seed is not None else cfg


def _simulate(cfg: ExperimentConfig, attack: str):
    seed = cfg.seeds[0]
    rng = np.random.default_rng(seed)
    sc = cfg.scenario
    if attack == OPTIMIZED:
        samples = generate_optimized_dataset(sc, cfg.channel_params, cfg.n_total, rng)
    else:
        samples = generate_dataset(sc, cfg.n_total, rng)
    true, _, _ = as_arrays(samples)
    obs = draw_observations(cfg.channel_params, true, sc.rsus, rng, kind=cfg.noise, dof=cfg.noise_dof)
    return samples, obs


def _obs_csv(obs: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"rss_{i + 1}" for i in range(obs.shape[1])])
    for row in obs:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _read_obs_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    return np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)


def cmd_simulate(args, cfg: ExperimentConfig) -> None:
    samples, obs = _simulate(cfg, args.attack)
    out = Path(args.out)
    _write(out, "dataset.csv", dataset_to_csv(samples))
    _write(out, "observations.csv", _obs_csv(obs))
    _write(out, "scenario.json", _dump(cfg.scenario.to_dict()))


def cmd_fit(args, cfg: ExperimentConfig) -> None:
    if not args.data:
        raise ConfigError("--data", "fit needs a distance,rss CSV")
    d, rss = read_fit_csv(Path(args.data).read_text())
    res = fit_gamma(d, rss, cfg.channel_params.d0)
    params = {"p_d0": res.p_d0, "d0": cfg.channel_params.d0, "gamma": res.gamma, "sigma_t": res.sigma_t}
    _write(Path(args.out), "channel_fit.json", _dump(params))


def cmd_eval_lrt(args, cfg: ExperimentConfig) -> None:
    if args.data:
        data = Path(args.data)
        samples = dataset_from_csv((data / "dataset.csv").read_text())
        obs = _read_obs_csv((data / "observations.csv").read_text())
    else:
        samples, obs = _simulate(cfg, args.attack)
    verifier = lrt.LrtVerifier(cfg.verifier_params, cfg.scenario, cfg.threshold, cfg.policy, cfg.seeds[0])
    thresholds = sorted(set(cfg.thresholds) | {cfg.threshold})
    rows = lrt.sweep_threshold(verifier, samples, obs, thresholds)
    _write(Path(args.out), "lrt.csv", lrt.stats_csv(rows))


def cmd_attack_opt(args, cfg: ExperimentConfig) -> None:
    rng = np.random.default_rng(cfg.seeds[0])
    c = AttackConstraints.from_scenario(cfg.scenario)
    samples = generate_optimized_dataset(cfg.scenario, cfg.channel_params, 2 * args.n, rng, c)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true_x", "true_y", "claim_x", "claim_y", "kl_divergence"])
    for row in attack_rows(samples, cfg.channel_params, cfg.scenario.rsus):
        w.writerow([repr(float(v)) for v in row])
    _write(Path(args.out), "attack.csv", buf.getvalue())


def cmd_train_ml(args, cfg: ExperimentConfig) -> None:
    samples, obs = _simulate(cfg, args.attack)
    _, claim, labels = as_arrays(samples)
    train_idx, test_idx = split_indices(labels, cfg.n_test_per_class, np.random.default_rng([cfg.seeds[0], 1]))
    x = neural.raw_features(cfg.scenario, obs, claim)
    tcfg = replace(cfg.train, rng_seed=cfg.seeds[0])
    model, trace = neural.train(x[train_idx], labels[train_idx], tcfg)
    decisions, _ = neural.classify(model, model.standardizer.apply(x[test_idx]))
    stats = lrt.DetectionStats.from_decisions(labels[test_idx], decisions, cfg.scenario.priors)
    out = Path(args.out)
    _write(out, "model.json", _dump(neural.model_to_json_dict(model, tcfg)))
    _write(out, "trace.csv", trace.to_csv())
    _write(out, "ml_test.json", _dump({"stop_reason": trace.stop_reason, "best_epoch": trace.best_epoch, **stats.to_dict()}))


def cmd_compare(args, cfg: ExperimentConfig) -> None:
    result = run_comparison(cfg)
    out = Path(args.out)
    _write(out, "result.json", _dump(result.to_dict()))
    _write(out, "curves.csv", learning_curve(result))


COMMANDS = {
    "simulate": (cmd_simulate, "emit a labelled dataset and RSS observations"),
    "fit": (cmd_fit, "fit pathloss parameters from a distance,rss CSV"),
    "eval-lrt": (cmd_eval_lrt, "evaluate the LRT verifier over a threshold sweep"),
    "attack-opt": (cmd_attack_opt, "emit KL-optimal attack geometry"),
    "train-ml": (cmd_train_ml, "train the neural verifier"),
    "compare": (cmd_compare, "full LRT vs neural comparison"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsslvs", description=__doc__)
    ap.add_argument("--version", action="version", version=f"rsslvs {__version__} (schema {SCHEMA_VERSION})")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="overrides experiment.seeds")
        p.add_argument("--out", default="out", help="output directory")
        if name in ("simulate", "eval-lrt", "train-ml"):
            p.add_argument("--attack", choices=["random", "optimized"], default="random")
        if name in ("fit", "eval-lrt"):
            p.add_argument("--data", help="input CSV (fit) or simulate output dir (eval-lrt)")
        if name == "attack-opt":
            p.add_argument("--n", type=int, default=50, help="number of attackers")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        COMMANDS[args.command][0](args, cfg)
    except ConfigError as exc:
        print(f"rsslvs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"rsslvs: infeasible geometry: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"rsslvs: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
