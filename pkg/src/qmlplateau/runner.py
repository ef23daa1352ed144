"""Dispatch a validated experiment config and write its CSV artifacts."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis
from .analysis import SweepConfig
from .config import config_hash
from .datasets import mnist_dataset
from .losses import LossKind
from .sim import MAX_QUBITS, SizeError
from .trainer import TrainConfig, train

SUMMARY_SCHEMA_VERSION = 1


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: list[str], rows, digest: str, experiment: str) -> None:
    """Comment line with the config hash, then an RFC-4180 table."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={digest} experiment={experiment}\r\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _sweep_configs(doc: dict):
    """SweepConfig per (embedding, qnn) variant of the sweep section."""
    sw = doc["sweep"]
    for emb in sw["embeddings"]:
        for qnn in sw["qnns"]:
            yield emb, qnn, SweepConfig(
                tuple(sw["qubit_range"]),
                embedding=emb["kind"],
                embedding_layers=emb["layers"],
                entangler=emb["entangler"],
                qnn=qnn,
                block_param_count=sw["block_param_count"],
                measurement=sw["measurement"],
                loss_kind=LossKind(sw["losses"][0], sw["clip_floor"]),
                dataset_rule=sw["dataset_rule"],
                points_per_n=sw["points_per_n"],
                param_samples=sw["param_samples"],
                grad_index=sw["grad_index"],
                seed=doc["seed"],
                data_dir=sw.get("data_dir"),
                threads=doc["threads"],
            )


def _variance_sweep(doc, out, digest):
    sw = doc["sweep"]
    rows, fits = [], []
    for emb, qnn, cfg in _sweep_configs(doc):
        kinds = [LossKind(k, sw["clip_floor"]) for k in sw["losses"]]
        modes = [False, True] if sw["include_single_point"] else [False]
        for n in cfg.qubit_range:
            samples = analysis.gradient_samples(cfg, n)
            for single in modes:
                for kind in kinds:
                    rec = analysis._record(samples, kind, single)
                    rows.append((rec.n, rec.loss_kind, rec.variance, rec.mean, rec.samples, doc["seed"],
                                 emb["kind"], emb["layers"], qnn, single, rec.n_points))
        for single in modes:
            for kind in kinds:
                sel = [r for r in rows if r[1] == kind.kind and r[6:10] == (emb["kind"], emb["layers"], qnn, single)]
                ns = np.array([r[0] for r in sel])
                vs = np.array([r[2] for r in sel])
                try:
                    f = analysis.decay_fit(ns, vs)
                    fits.append((emb["kind"], emb["layers"], qnn, single, kind.kind, f.slope, f.intercept, f.r_squared, f.alpha_estimate))
                except analysis.FitError:
                    pass
    files = {"variance": out / "variance.csv", "decay_fit": out / "decay_fit.csv"}
    write_csv(files["variance"], ["n", "loss_kind", "variance", "mean", "samples", "seed",
                                  "embedding", "layers", "qnn", "single_point", "n_points"], rows, digest, doc["experiment"])
    write_csv(files["decay_fit"], ["embedding", "layers", "qnn", "single_point", "loss_kind",
                                   "slope", "intercept", "r_squared", "alpha"], fits, digest, doc["experiment"])
    return files


def _fi_spectrum(doc, out, digest):
    traces, eigs = [], []
    for emb, qnn, cfg in _sweep_configs(doc):
        for rec in analysis.fi_spectrum_sweep(cfg):
            traces.append((rec.n, emb["kind"], emb["layers"], qnn, rec.mean_trace, rec.trace_std, rec.max_eigenvalue, rec.samples, doc["seed"]))
            per = rec.eigenvalues.reshape(rec.samples, -1)
            for d, row in enumerate(per):
                for k, v in enumerate(row):
                    eigs.append((rec.n, emb["kind"], emb["layers"], qnn, d, k, v))
    files = {"fi_trace": out / "fi_trace.csv", "fi_eigenvalues": out / "fi_eigenvalues.csv"}
    write_csv(files["fi_trace"], ["n", "embedding", "layers", "qnn", "mean_trace", "trace_std", "max_eigenvalue", "samples", "seed"],
              traces, digest, doc["experiment"])
    write_csv(files["fi_eigenvalues"], ["n", "embedding", "layers", "qnn", "draw", "rank", "eigenvalue"], eigs, digest, doc["experiment"])
    return files


def _hs_sweep(doc, out, digest):
    rows = []
    seen = set()
    for emb, _, cfg in _sweep_configs(doc):
        key = (emb["kind"], emb["layers"], emb["entangler"])
        if key in seen:
            continue
        seen.add(key)
        for rec in analysis.hs_sweep(cfg, points=doc["sweep"]["hs_points"]):
            rows.append((rec.n, emb["kind"], rec.layers, rec.mean_distance, rec.points, doc["seed"]))
    files = {"hs": out / "hs.csv"}
    write_csv(files["hs"], ["n", "embedding", "layers", "mean_distance", "points", "seed"], rows, digest, doc["experiment"])
    return files


def random_bound_configs(count: int, qubit_choices, seed: int, param_samples: int, points_per_n=None):
    """Reproducible random (embedding, layers, QNN, measurement, n) draws for the bound check."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.choice(qubit_choices))
        emb = str(rng.choice(["TPE", "HEE", "CHE"]))
        out.append(SweepConfig(
            (n,),
            embedding=emb,
            embedding_layers=int(rng.integers(1, 4)),
            qnn=str(rng.choice(["TensorRY", "QCNN"])) if n >= 2 else "TensorRY",
            measurement=str(rng.choice(["GlobalParity", "LocalParity2"])) if n >= 2 else "GlobalParity",
            param_samples=param_samples,
            points_per_n=points_per_n,
            seed=int(rng.integers(0, 2**63)),
        ))
    return out


def _theorem1(doc, out, digest):
    t1 = doc["theorem1"]
    rows = []
    cfgs = random_bound_configs(t1["configurations"], t1["qubit_choices"], doc["seed"], t1["param_samples"], t1["points_per_n"])
    for k, cfg in enumerate(cfgs):
        cfg = replace(cfg, threads=doc["threads"])
        for rec in analysis.theorem1_check(cfg, t1["losses"]):
            rows.append((k, rec.n, cfg.embedding, cfg.embedding_layers, cfg.qnn, cfg.measurement, rec.loss_kind,
                         rec.variance, rec.standard_error, rec.rhs, rec.holds))
    files = {"theorem1": out / "theorem1.csv"}
    write_csv(files["theorem1"], ["config", "n", "embedding", "layers", "qnn", "measurement", "loss_kind",
                                  "variance", "standard_error", "rhs", "holds"], rows, digest, doc["experiment"])
    return files


def _prop1(doc, out, digest):
    p = doc["prop1"]
    rows, fits = [], []
    for n in p["qubit_range"]:
        if n % p["s"]:
            raise ValueError(f"s={p['s']} does not divide n={n}")
        angles = np.linspace(0.0, np.pi / 4, p["states"])
        states = [analysis.paired_entangled_state(n, p["s"], a) for a in angles]
        rep = analysis.proposition1_check(p["s"], n // p["s"], states, p["trials"], seed=doc["seed"] + n)
        for a, r in zip(angles, rep.records):
            rows.append((n, a, r.hs_distance, r.variance, r.standard_error))
        fits.append((n, rep.slope, rep.r_squared))
    files = {"prop1": out / "prop1.csv", "prop1_fit": out / "prop1_fit.csv"}
    write_csv(files["prop1"], ["n", "angle", "hs_distance", "variance", "standard_error"], rows, digest, doc["experiment"])
    write_csv(files["prop1_fit"], ["n", "slope", "r_squared"], fits, digest, doc["experiment"])
    return files


def train_splits(t: dict, seed: int):
    return mnist_dataset(t["n_qubits"], t["train_count"], t["test_count"], seed, data_dir=t.get("data_dir"))


def _train(doc, out, digest):
    t = doc["train"]
    tr, te = train_splits(t, doc["seed"])
    rows, finals = [], []
    for emb in t["embeddings"]:
        for run in range(t["runs"]):
            cfg = TrainConfig(t["n_qubits"], t["qnn"], t["block_param_count"], emb["kind"], emb["layers"], emb["entangler"],
                              t["measurement"], t["iterations"], t["learning_rate"], seed=doc["seed"] + run)
            trace = train(cfg, tr, te)
            for r in trace.records:
                rows.append((emb["kind"], emb["layers"], cfg.seed, r.iteration, r.train_loss, r.train_accuracy, r.test_accuracy))
            finals.append((emb["kind"], emb["layers"], cfg.seed, trace.final.train_loss, trace.final.train_accuracy, trace.final.test_accuracy))
    files = {"trace": out / "trace.csv", "final": out / "final.csv"}
    write_csv(files["trace"], ["embedding", "layers", "seed", "iteration", "train_loss", "train_accuracy", "test_accuracy"],
              rows, digest, doc["experiment"])
    write_csv(files["final"], ["embedding", "layers", "seed", "train_loss", "train_accuracy", "test_accuracy"],
              finals, digest, doc["experiment"])
    return files


DISPATCH = {
    "variance-sweep": _variance_sweep,
    "fi-spectrum": _fi_spectrum,
    "hs-sweep": _hs_sweep,
    "theorem1-check": _theorem1,
    "prop1-check": _prop1,
    "train": _train,
}


def check_sizes(doc: dict) -> None:
    """Reject oversized registers before any compute starts."""
    section = doc.get("sweep") or doc.get("theorem1") or doc.get("prop1") or doc.get("train")
    qubits = list(section.get("qubit_range", [])) + list(section.get("qubit_choices", []))
    if "n_qubits" in section:
        qubits.append(section["n_qubits"])
    too_big = [n for n in qubits if n > MAX_QUBITS]
    if too_big:
        raise SizeError(f"qubit counts {too_big} exceed the simulator limit of {MAX_QUBITS}")


def run_experiment(doc: dict, out_root) -> dict:
    """Run a defaulted config; artifacts go to ``out_root/<hash[:12]>``.  Returns the summary."""
    check_sizes(doc)
    digest = config_hash(doc)
    out = Path(out_root) / digest[:12]
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = DISPATCH[doc["experiment"]](doc, out, digest)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "status": "ok",
        "version": __version__,
        "config_hash": digest,
        "config": doc,
        "files": {k: str(v) for k, v in files.items()},
        "wall_time_seconds": time.perf_counter() - t0,
    }
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    summary["files"]["summary"] = str(path)
    return summary
