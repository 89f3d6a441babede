"""Command-line drivers: synth, train, explain, al-sim, diag and bench.

Machine-readable results (JSON or CSV) go to standard output and logs to
standard error. Exit codes: 0 success or confident attribution, 1 usage
error, 2 deferred attribution, 3 registration failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import active, diagnostics, experiments, gpc, persistence, shapes
from .active import AcquisitionConfig, LabeledSet, SimulationOracle, UnlabeledPool
from .diagnostics import EvalRecord
from .features import as_matrix, export_embeddings, extract_features, fit_standardizer, import_embeddings
from .geometry import apply_transform
from .gpc import KernelSpec, PredictConfig, SvgpModel, TrainOptions
from .icp import IcpParams, RegistrationDiverged, registration_uncertainty
from .perturb import PerturbSpec, Vocabulary, synth_dataset
from .pipeline import embed_pairs, explain
from .policy import PolicyConfig

log = logging.getLogger("icpexplain")

EXIT_OK, EXIT_USAGE, EXIT_DEFER, EXIT_REGISTRATION = 0, 1, 2, 3

BENCH_COMPONENTS = (
    "icp_alignment",
    "feature_extraction",
    "gpc_posterior_sampling",
    "attribution_scoring",
    "bald_selection",
    "gpc_retraining",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, allow_nan=False) + "\n")


# --------------------------------------------------------------------------
# shared flag groups


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master seed for every random stream of the command")
    p.add_argument("--log-level", default="WARNING", help="stderr log level (DEBUG, INFO, WARNING, ...)")
    return p


def _icp_flags() -> argparse.ArgumentParser:
    d = IcpParams()
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("ICP")
    g.add_argument("--icp-max-iterations", type=int, default=d.max_iterations)
    g.add_argument("--icp-tol", type=float, default=d.convergence_tol, help="RMSE change that counts as converged")
    g.add_argument("--icp-max-corr-dist", type=float, default=None,
                   help="correspondence gate in meters (default 0.5 x target diameter)")
    g.add_argument("--icp-restarts", type=int, default=d.restarts_for_uncertainty,
                   help="ICP runs J used for the uncertainty u")
    g.add_argument("--icp-restart-rotation-deg", type=float, default=float(np.rad2deg(d.restart_rotation)))
    g.add_argument("--icp-restart-translation", type=float, default=None,
                   help="restart translation bound in meters (default 0.02 x diameter)")
    g.add_argument("--icp-sigma-rotation-deg", type=float, default=float(np.rad2deg(d.sigma_rotation)))
    g.add_argument("--icp-sigma-translation", type=float, default=None,
                   help="reference translation spread in meters (default 1e-3 x diameter)")
    return p


def _icp_params(a) -> IcpParams:
    return IcpParams(
        max_iterations=a.icp_max_iterations,
        convergence_tol=a.icp_tol,
        max_correspondence_dist=a.icp_max_corr_dist,
        restarts_for_uncertainty=a.icp_restarts,
        restart_rotation=float(np.deg2rad(a.icp_restart_rotation_deg)),
        restart_translation=a.icp_restart_translation,
        sigma_rotation=float(np.deg2rad(a.icp_sigma_rotation_deg)),
        sigma_translation=a.icp_sigma_translation,
        seed=a.seed,
    )


def _predict_flags() -> argparse.ArgumentParser:
    d = PredictConfig()
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("prediction")
    g.add_argument("--mc-samples", type=int, default=d.mc_samples, help="posterior samples M")
    g.add_argument("--score-threshold", type=float, default=d.score_threshold,
                   help="defer when the top score is below this")
    g.add_argument("--variance-threshold", type=float, default=d.variance_threshold,
                   help="defer when the top score's variance exceeds this")
    return p


def _predict_cfg(a) -> PredictConfig:
    return PredictConfig(a.mc_samples, a.seed, a.score_threshold, a.variance_threshold)


def _bases(names, points: int):
    clouds = []
    for name in names:
        if name in shapes.BUILTIN:
            clouds.append(shapes.builtin(name, points, seed=0))
        elif Path(name).is_file():
            clouds.append(persistence.read_cloud(name))
        else:
            raise UsageError(f"unknown base {name!r}: not a built-in shape ({sorted(shapes.BUILTIN)}) or a file")
    return clouds


# --------------------------------------------------------------------------
# commands


def cmd_synth(a) -> int:
    spec = PerturbSpec(
        noise_sigma_range=(a.noise_min, a.noise_max),
        pose_rot_range=(float(np.deg2rad(a.rot_min_deg)), float(np.deg2rad(a.rot_max_deg))),
        pose_trans_range=(a.trans_min, a.trans_max),
        overlap_keep_range=(a.keep_min, a.keep_max),
        seed=a.seed,
    )
    vocab = Vocabulary(a.concepts)
    bases = _bases(a.bases, a.points)
    names = [Path(b).stem for b in a.bases]
    log.info("synthesizing %d pairs per concept over %s", a.per_concept, names)
    pairs = synth_dataset(bases, a.per_concept, spec, names, vocab)
    digest = persistence.save_dataset(a.out, pairs, vocab, spec, extra={"bases": names, "points": a.points})
    counts = {c: sum(p.label.name == c for p in pairs) for c in vocab.names}
    _emit_json({"manifest_hash": digest, "pairs": len(pairs), "per_concept": counts, "out": str(a.out)})
    return EXIT_OK


def _split(n: int, val_fraction: float, seed: int):
    order = np.random.default_rng([seed, 0x7A]).permutation(n)
    n_val = int(round(val_fraction * n))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def cmd_train(a) -> int:
    ds = persistence.load_dataset(a.dataset)
    params = _icp_params(a)
    log.info("embedding %d pairs", len(ds.pairs))
    emb, labels, _ = embed_pairs(ds.pairs, params)
    train_idx, val_idx = _split(len(emb), a.val_fraction, a.seed)
    X = as_matrix(emb)
    y = np.array(labels, dtype=object)
    kernel = KernelSpec(a.kernel, 1.0, 1.0, a.degree, a.offset)
    model = SvgpModel(ds.vocabulary, kernel, num_inducing=a.num_inducing,
                      standardizer=fit_standardizer(X[train_idx]))
    opt = TrainOptions(learning_rate=a.lr, iterations=a.iters, minibatch=a.minibatch, seed=a.seed,
                       mc_samples=a.train_mc_samples)
    started = time.perf_counter()
    model = gpc.train(model, X[train_idx], list(y[train_idx]), opt)
    log.info("trained in %.2f s", time.perf_counter() - started)
    pcfg = _predict_cfg(a)
    report = {
        "num_train": int(len(train_idx)),
        "num_validation": int(len(val_idx)),
        "train_accuracy": gpc.accuracy(model, X[train_idx], list(y[train_idx]), pcfg),
        "validation_accuracy": (gpc.accuracy(model, X[val_idx], list(y[val_idx]), pcfg)
                                if len(val_idx) else None),
        "final_elbo": model.metadata["final_elbo"],
        "kernel": model.kernel.family,
        "learning_rate": a.lr,
        "iterations": a.iters,
    }
    if a.model_out:
        report["model_hash"] = persistence.save_model(model, a.model_out)
        files = [a.model_out]
        if a.embeddings_out:
            export_embeddings(a.embeddings_out, X, list(y))
            files.append(a.embeddings_out)
        configs = {"IcpParams": asdict(params), "KernelSpec": model.kernel.to_dict(),
                   "TrainOptions": asdict(opt), "PredictConfig": asdict(pcfg),
                   "dataset_manifest_hash": ds.manifest_hash}
        report["manifest_hash"] = persistence.write_manifest(
            str(a.model_out) + ".manifest.json", configs, files, seed=a.seed)
    if a.trace_out:
        with open(a.trace_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "elbo"])
            for i, v in enumerate(model.elbo_trace):
                w.writerow([i, repr(float(v))])
    _emit_json(report)
    return EXIT_OK


def cmd_explain(a) -> int:
    model = persistence.load_model(a.model)
    source = persistence.read_cloud(a.source)
    target = persistence.read_cloud(a.target)
    t0 = persistence.read_transform(a.t0) if a.t0 else None
    policy = PolicyConfig(a.score_threshold, a.variance_threshold, a.max_retries, a.improvement_epsilon)
    try:
        result = explain(model, source, target, t0, _icp_params(a), _predict_cfg(a), policy)
    except RegistrationDiverged as err:
        _emit_json({"error": "registration diverged", "detail": str(err),
                    "last_pose": err.last_pose.to_list(), "iterations": err.iterations})
        return EXIT_REGISTRATION
    _emit_json(result.to_dict(model.vocabulary.names))
    return EXIT_DEFER if result.attribution.defer else EXIT_OK


def _labeled_csv(path, vocabulary: Vocabulary):
    rows, vocabulary = import_embeddings(path, vocabulary, extend_vocab=True)
    if any(lab is None for _, lab in rows):
        raise UsageError(f"{path}: needs a label column")
    return as_matrix([e for e, _ in rows]), [lab.name for _, lab in rows], vocabulary


def cmd_al_sim(a) -> int:
    cfg = AcquisitionConfig(
        budget_per_round=a.budget, expansion_factor=a.expansion, mc_samples=a.mc_samples,
        kmeans_max_iters=a.kmeans_max_iters, kmeans_restarts=a.kmeans_restarts, seed=a.seed,
        rounds_max=a.rounds_max, target_accuracy=a.target, strategy=a.strategy,
        retrain_iterations=a.retrain_iters, learning_rate=a.lr)
    if a.scenario == "third-concept":
        sc = experiments.third_concept_scenario(
            a.seed, a.initial_per_concept, a.pool_per_concept, a.validation_per_concept, a.points,
            _icp_params(a))
        model, labeled, pool, validation = sc.model, sc.labeled, sc.pool, sc.validation
        universe = Vocabulary().names
    else:
        if not (a.model and a.labeled and a.pool and a.validation):
            raise UsageError("al-sim needs --scenario third-concept or all of --model, --labeled, --pool, --validation")
        model = persistence.load_model(a.model)
        Xl, yl, v = _labeled_csv(a.labeled, model.vocabulary)
        Xp, yp, v = _labeled_csv(a.pool, v)
        Xv, yv, v = _labeled_csv(a.validation, v)
        labeled = LabeledSet(Xl, yl)
        pool = UnlabeledPool(list(range(len(Xp))), Xp, yp)
        validation = LabeledSet(Xv, yv)
        universe = v.names
    model, history = active.run_al_loop(model, labeled, pool, validation, SimulationOracle(pool), cfg, universe)
    log.info("labels to target %.2f: %s", a.target, history.labels_to_target(a.target))
    if a.model_out:
        persistence.save_model(model, a.model_out)
    sys.stdout.write(history.to_csv())
    return EXIT_OK


def _records_from_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"confidence", "uncertainty", "correct"}
        if not need <= set(reader.fieldnames or ()):
            raise UsageError(f"{path}: needs columns {sorted(need)} (and optionally distance_to_train)")
        out = []
        for row in reader:
            correct = row["correct"].strip().lower() in ("1", "true", "t", "yes")
            out.append(EvalRecord(float(row["confidence"]), float(row["uncertainty"]), correct,
                                  float(row.get("distance_to_train") or 0.0)))
    return out


def eval_records(model: SvgpModel, X, labels, train_X, cfg: PredictConfig, uncertainty: str = "variance"):
    """EvalRecords for embeddings ``X``; distances are measured in standardized space."""
    scores, variances, probs = gpc.predict_proba(model, X, cfg)
    decision = scores.argmax(axis=1)
    conf = scores[np.arange(len(X)), decision]
    if uncertainty == "variance":
        unc = variances[np.arange(len(X)), decision]
    elif uncertainty == "one-minus-confidence":
        unc = 1.0 - conf
    elif uncertainty == "bald":
        unc = np.maximum(active.bald_from_probabilities(probs), 0.0)
    else:
        raise UsageError(f"unknown uncertainty scalar {uncertainty!r}")
    dist = diagnostics.distances_to_train(model.prepare(X), model.prepare(train_X))
    names = model.vocabulary.names
    return [EvalRecord(float(c), float(u), names[d] == lab, float(r))
            for c, u, d, lab, r in zip(conf, unc, decision, labels, dist)]


def cmd_diag(a) -> int:
    if a.records:
        records = _records_from_csv(a.records)
    else:
        if not (a.model and a.eval and a.train):
            raise UsageError("diag needs --records, or all of --model, --eval, --train")
        model = persistence.load_model(a.model)
        Xe, ye, _ = _labeled_csv(a.eval, model.vocabulary)
        Xt, _, _ = _labeled_csv(a.train, model.vocabulary)
        records = eval_records(model, Xe, ye, Xt, _predict_cfg(a), a.uncertainty)
    summary = diagnostics.summarize(records, a.bins)
    summary["n"] = len(records)
    _emit_json(summary)
    return EXIT_OK


def _mean_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        times.append(time.perf_counter() - started)
    return float(np.mean(times))


def cmd_bench(a) -> int:
    """Per-stage mean wall-clock seconds; stage names follow the runtime table."""
    params = _icp_params(a)
    if a.dataset:
        pairs = persistence.load_dataset(a.dataset).pairs
    else:
        per = -(-a.pool_size // 3)
        pairs = synth_dataset(experiments.desk_bases(points=a.points), per, PerturbSpec(seed=a.seed),
                              experiments.DESK_BASES)
    n_embed = max(a.pool_size, a.retrain_labels)
    icp_times, feat_times, emb, labels = [], [], [], []
    for k in range(max(n_embed, a.repeats)):
        pair = pairs[k % len(pairs)]
        started = time.perf_counter()
        result, _ = registration_uncertainty(pair.source, pair.target, None, params)
        icp_times.append(time.perf_counter() - started)
        started = time.perf_counter()
        e = extract_features(apply_transform(pair.source, result.transform), pair.target, result,
                             max_iterations=params.max_iterations)
        feat_times.append(time.perf_counter() - started)
        if k < n_embed:
            emb.append(e)
            labels.append(pair.label.name)
    X = as_matrix(emb)
    opt = TrainOptions(learning_rate=a.lr, iterations=a.iters, seed=a.seed)
    known = Vocabulary().names
    vocab = Vocabulary([c for c in known if c in labels] + sorted(set(labels) - set(known)))

    def retrain():
        fresh = experiments.new_model(vocab, fit_standardizer(X[:a.retrain_labels]))
        return gpc.train(fresh, X[:a.retrain_labels], labels[:a.retrain_labels], opt)

    model = persistence.load_model(a.model) if a.model else retrain()
    pcfg = PredictConfig(mc_samples=a.mc_samples, seed=a.seed)
    h = X[0]
    pool = UnlabeledPool(list(range(a.pool_size)), X[:a.pool_size])
    acfg = AcquisitionConfig(mc_samples=a.mc_samples, seed=a.seed)
    timings = {
        "icp_alignment": float(np.mean(icp_times[:a.repeats])),
        "feature_extraction": float(np.mean(feat_times[:a.repeats])),
        "gpc_posterior_sampling": _mean_time(lambda: gpc.sample_logits(model, h, pcfg), a.repeats),
        "attribution_scoring": _mean_time(lambda: gpc.attribute(model, h, pcfg), a.repeats),
        "bald_selection": _mean_time(lambda: active.select_batch(model, pool, acfg), a.repeats),
        "gpc_retraining": _mean_time(retrain, a.retrain_repeats or a.repeats),
    }
    _emit_json({
        "unit": "seconds",
        "repeats": a.repeats,
        "retrain_repeats": a.retrain_repeats or a.repeats,
        "pool_size": a.pool_size,
        "retrain_labels": a.retrain_labels,
        "mc_samples": a.mc_samples,
        "mean_seconds": timings,
    })
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common, icp, pred = _common_flags(), _icp_flags(), _predict_flags()
    parser = _Parser(prog="icpexplain", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    dspec, dtrain, dacq, dpol = PerturbSpec(), TrainOptions(), AcquisitionConfig(), PolicyConfig()

    p = sub.add_parser("synth", parents=[common], help="generate a labeled perturbation dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--bases", nargs="+", default=list(experiments.DESK_BASES),
                   help=f"built-in shapes {sorted(shapes.BUILTIN)} or PLY/XYZ paths")
    p.add_argument("--points", type=int, default=2000, help="points per built-in base")
    p.add_argument("--per-concept", type=int, default=100)
    p.add_argument("--concepts", nargs="+", default=Vocabulary().names)
    p.add_argument("--noise-min", type=float, default=dspec.noise_sigma_range[0], help="fraction of diameter")
    p.add_argument("--noise-max", type=float, default=dspec.noise_sigma_range[1], help="fraction of diameter")
    p.add_argument("--rot-min-deg", type=float, default=float(np.rad2deg(dspec.pose_rot_range[0])))
    p.add_argument("--rot-max-deg", type=float, default=float(np.rad2deg(dspec.pose_rot_range[1])))
    p.add_argument("--trans-min", type=float, default=dspec.pose_trans_range[0], help="fraction of diameter")
    p.add_argument("--trans-max", type=float, default=dspec.pose_trans_range[1], help="fraction of diameter")
    p.add_argument("--keep-min", type=float, default=dspec.overlap_keep_range[0])
    p.add_argument("--keep-max", type=float, default=dspec.overlap_keep_range[1])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common, icp, pred], help="embed a dataset and train the classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model-out", default=None)
    p.add_argument("--embeddings-out", default=None, help="also write the embedding CSV (needs --model-out)")
    p.add_argument("--trace-out", default=None, help="ELBO trace CSV path")
    p.add_argument("--kernel", default="rbf", help="rbf, matern32 or polynomial")
    p.add_argument("--degree", type=int, default=2, help="polynomial kernel degree")
    p.add_argument("--offset", type=float, default=1.0, help="polynomial kernel offset")
    p.add_argument("--num-inducing", type=int, default=32)
    p.add_argument("--lr", type=float, default=dtrain.learning_rate)
    p.add_argument("--iters", type=int, default=dtrain.iterations)
    p.add_argument("--minibatch", type=int, default=None)
    p.add_argument("--train-mc-samples", type=int, default=dtrain.mc_samples, help="ELBO samples per step")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", parents=[common, icp, pred],
                       help="register a pair, attribute its uncertainty and recommend an action")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True, help="PLY or XYZ")
    p.add_argument("--target", required=True, help="PLY or XYZ")
    p.add_argument("--t0", default=None, help="initial transform JSON (12 numbers, R row-major then t)")
    p.add_argument("--max-retries", type=int, default=dpol.max_retries)
    p.add_argument("--improvement-epsilon", type=float, default=dpol.improvement_epsilon)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("al-sim", parents=[common, icp], help="simulate active learning; prints history CSV")
    p.add_argument("--scenario", choices=["third-concept"], default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--labeled", default=None, help="labeled embedding CSV the model was trained on")
    p.add_argument("--pool", default=None, help="pool embedding CSV with hidden labels")
    p.add_argument("--validation", default=None, help="validation embedding CSV")
    p.add_argument("--model-out", default=None)
    p.add_argument("--strategy", choices=["bald", "random"], default=dacq.strategy)
    p.add_argument("--budget", type=int, default=dacq.budget_per_round, help="labels per round B")
    p.add_argument("--expansion", type=int, default=dacq.expansion_factor, help="candidate factor K")
    p.add_argument("--mc-samples", type=int, default=dacq.mc_samples)
    p.add_argument("--kmeans-max-iters", type=int, default=dacq.kmeans_max_iters)
    p.add_argument("--kmeans-restarts", type=int, default=dacq.kmeans_restarts)
    p.add_argument("--rounds-max", type=int, default=dacq.rounds_max)
    p.add_argument("--target", type=float, default=dacq.target_accuracy)
    p.add_argument("--retrain-iters", type=int, default=dacq.retrain_iterations)
    p.add_argument("--lr", type=float, default=dacq.learning_rate)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--initial-per-concept", type=int, default=30)
    p.add_argument("--pool-per-concept", type=int, default=100)
    p.add_argument("--validation-per-concept", type=int, default=30)
    p.set_defaults(func=cmd_al_sim)

    p = sub.add_parser("diag", parents=[common, pred], help="rank correlation, coverage-risk AUC and ECE")
    p.add_argument("--records", default=None,
                   help="CSV with confidence,uncertainty,correct[,distance_to_train]")
    p.add_argument("--model", default=None)
    p.add_argument("--eval", default=None, help="labeled embedding CSV to evaluate")
    p.add_argument("--train", default=None, help="labeled embedding CSV the model was trained on")
    p.add_argument("--uncertainty", choices=["variance", "one-minus-confidence", "bald"], default="variance")
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("bench", parents=[common, icp], help="per-component runtime JSON")
    p.add_argument("--model", default=None, help="model to time (default: train one on the bench data)")
    p.add_argument("--dataset", default=None, help="dataset directory (default: synthesize desk-scale pairs)")
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--retrain-repeats", type=int, default=None, help="default: --repeats")
    p.add_argument("--pool-size", type=int, default=300)
    p.add_argument("--retrain-labels", type=int, default=300)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--mc-samples", type=int, default=1000)
    p.add_argument("--lr", type=float, default=dtrain.learning_rate)
    p.add_argument("--iters", type=int, default=dtrain.iterations)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, FileNotFoundError, persistence.PersistenceError) as err:
        log.error("%s", err)
        sys.stderr.write(f"error: {err}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
