"""Staged batch pipeline over a working directory.

Every stage reads upstream artifacts from the workspace (checking their
recorded hashes), writes its own artifacts, and records their SHA-256 in
``manifest.json``. Running all stages in order is the full pipeline.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import bounds, dataset, embed, evaluate, gbm, resample, spectral
from .affinity import KernelParams, build_affinity, dump_affinity, load_affinity
from .dataset import CorruptionSpec, Dataset, Schema
from .embed import EmbedParams
from .errors import ConfigError, DataError, RobustPSError
from .gbm import BoostConfig
from .resample import ResampleParams

log = logging.getLogger(__name__)

STAGES = ("ingest", "corrupt", "cluster", "resample", "train", "evaluate", "embed", "bounds")
MANIFEST = "manifest.json"


@dataclass
class RunConfig:
    schema: str | None = None
    input: str | None = None
    synthetic: dict | None = None
    seed: int = 0
    n_clusters: int | None = None
    kernel: KernelParams = field(default_factory=KernelParams)
    resample: ResampleParams = field(default_factory=ResampleParams)
    epsilon_from_rate: bool = False
    boost: BoostConfig = field(default_factory=BoostConfig)
    rounds_clean: int = 10
    rounds_corrupted: int = 5
    embed: EmbedParams = field(default_factory=EmbedParams)
    perplexity_clusters: float = 90.0
    perplexity_treatments: float = 180.0
    per_cluster: int = 50
    per_treatment: int = 100
    embed_enabled: bool = True
    corruption_rates: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.4])
    subset_size: int = 3000
    replace: bool = False
    validation_fraction: float = 0.2
    covariates: list[str] | None = None
    kmeans_restarts: int = 10
    max_cluster_samples: int = spectral.DEFAULT_CAP
    dump_affinity: bool = False
    out: str = "runs/default"

    def __post_init__(self):
        if self.input is None and self.synthetic is None:
            raise ConfigError("config needs either 'input' (+ 'schema') or 'synthetic'")
        if self.input is not None and self.schema is None:
            raise ConfigError("'input' requires a 'schema' path")
        for r in self.corruption_rates:
            CorruptionSpec(r)
            if self.epsilon_from_rate:
                replace(self.resample, epsilon=r)  # validates eta * epsilon < 1
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if self.subset_size < 1:
            raise ConfigError("subset_size must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "kernel" in doc:
                doc["kernel"] = KernelParams(**doc["kernel"])
            if "resample" in doc:
                rs = dict(doc["resample"])
                if rs.get("epsilon") == "rate":
                    rs["epsilon"] = 0.0
                    doc.setdefault("epsilon_from_rate", True)
                elif "epsilon" in rs:
                    doc.setdefault("epsilon_from_rate", False)
                doc["resample"] = ResampleParams(**rs)
            if "boost" in doc:
                doc["boost"] = BoostConfig(**doc["boost"])
            if "embed" in doc:
                doc["embed"] = EmbedParams(**doc["embed"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if base_dir is not None:
            for key in ("schema", "input"):
                if doc.get(key) and not Path(doc[key]).is_absolute():
                    doc[key] = str(base_dir / doc[key])
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# helpers


def derive_seed(seed: int, *keys) -> int:
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def rate_dir(rate: float) -> str:
    return f"rate_{rate:.2f}"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


class Workspace:
    """Artifact store rooted at one directory, with a hash manifest."""

    def __init__(self, root: str | Path, config: RunConfig):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config = config
        mpath = self.root / MANIFEST
        if mpath.exists():
            self.manifest = json.loads(mpath.read_text())
        else:
            self.manifest = {"config": None, "stages": {}, "artifacts": {}}
        self.manifest["config"] = _jsonable(config.to_dict())

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, rel: str) -> None:
        self.manifest["artifacts"][rel] = sha256(self.root / rel)

    def require(self, rel: str) -> Path:
        p = self.root / rel
        expected = self.manifest["artifacts"].get(rel)
        if not p.exists() or expected is None:
            raise DataError(f"missing upstream artifact {rel}; run the producing stage first")
        if sha256(p) != expected:
            raise DataError(f"upstream artifact {rel} does not match its manifest hash")
        return p

    def has(self, rel: str) -> bool:
        return rel in self.manifest["artifacts"] and (self.root / rel).exists()

    def write_json(self, rel: str, obj) -> None:
        self.path(rel).write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")
        self.record(rel)

    def read_json(self, rel: str):
        return json.loads(self.require(rel).read_text())

    def write_text(self, rel: str, text: str) -> None:
        self.path(rel).write_text(text)
        self.record(rel)

    def write_rows(self, rel: str, header, rows) -> None:
        with open(self.path(rel), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        self.record(rel)

    def read_rows(self, rel: str) -> list[list[str]]:
        with open(self.require(rel), newline="") as fh:
            return list(csv.reader(fh))[1:]

    def save_manifest(self) -> None:
        (self.root / MANIFEST).write_text(json.dumps(self.manifest, indent=1, sort_keys=True) + "\n")

    def copy_from(self, src: str | Path) -> None:
        src = Path(src)
        mpath = src / MANIFEST
        if not mpath.exists():
            raise DataError(f"{src} has no {MANIFEST}")
        upstream = json.loads(mpath.read_text())
        for rel, digest in upstream["artifacts"].items():
            s = src / rel
            if not s.exists() or sha256(s) != digest:
                raise DataError(f"upstream artifact {rel} in {src} is missing or altered")
            dst = self.path(rel)
            if s.resolve() != dst.resolve():
                shutil.copyfile(s, dst)
        self.manifest["artifacts"].update(upstream["artifacts"])
        for k, v in upstream["stages"].items():
            self.manifest["stages"].setdefault(k, v)


# --------------------------------------------------------------------------
# loaders shared by stages


def load_data(ws: Workspace) -> Dataset:
    schema = Schema.from_dict(ws.read_json("data/schema.json"))
    data = dataset.ingest(ws.require("data/data.csv"), schema)
    if ws.has("data/truth.csv"):
        truth = np.array([int(r[1]) for r in ws.read_rows("data/truth.csv")])
        data = replace(data, pattern=truth)
    return data


def load_clusters(ws: Workspace) -> spectral.ClusterAssignment:
    summary = ws.read_json("cluster/summary.json")
    labels = np.array([int(r[1]) for r in ws.read_rows("cluster/labels.csv")])
    return spectral.ClusterAssignment(labels=labels, n=summary["n"], inertia=summary["inertia"])


def load_corrupted(ws: Workspace, data: Dataset, rate: float) -> Dataset:
    rows = ws.read_rows(f"{rate_dir(rate)}/corrupt/labels.csv")
    t = np.array([int(r[1]) for r in rows])
    flags = np.array([r[2] == "1" for r in rows])
    return data.with_treatment(t, corrupted=flags)


def load_subset_index(ws: Workspace, rel: str) -> np.ndarray:
    return np.array([int(r[0]) for r in ws.read_rows(rel)], dtype=np.int64)


def load_predictions(ws: Workspace, rel: str) -> np.ndarray:
    return np.array([[float(v) for v in r[1:]] for r in ws.read_rows(rel)])


def _write_subset(ws: Workspace, rel: str, sub: Dataset) -> None:
    tmp = ws.path(rel + ".tmp")
    dataset.export_csv(sub, tmp)
    with open(tmp, newline="") as fh:
        rows = list(csv.reader(fh))
    tmp.unlink()
    ws.write_rows(rel, ["source_row"] + rows[0], [[int(s)] + r for s, r in zip(sub.source, rows[1:])])


# --------------------------------------------------------------------------
# stages


def stage_ingest(ws: Workspace) -> None:
    cfg = ws.config
    if cfg.input is not None:
        data = dataset.ingest(cfg.input, Schema.load(cfg.schema))
    else:
        gen, _ = synthetic_spec(cfg.synthetic)
        data = dataset.synthesize(gen, derive_seed(cfg.seed, "synth"))
    write_dataset(ws, data, "data")


def write_dataset(ws: Workspace, data: Dataset, prefix: str) -> None:
    dataset.export_csv(data, ws.path(f"{prefix}/data.csv"))
    ws.record(f"{prefix}/data.csv")
    ws.write_json(f"{prefix}/schema.json", data.schema.to_dict())
    if data.pattern is not None:
        ws.write_rows(f"{prefix}/truth.csv", ["row", "pattern"], enumerate(data.pattern.tolist()))
    ws.write_json(f"{prefix}/summary.json", {
        "m": data.m, "d": data.d, "dropped": data.dropped,
        "treatment_labels": list(data.treatment_labels),
        "class_counts": data.class_counts().tolist(),
        "ground_truth": data.pattern is not None,
    })


def synthetic_spec(doc: dict) -> tuple[dataset.SyntheticSpec, str]:
    if "spec" in doc:
        return dataset.SyntheticSpec.from_dict(doc["spec"]), "custom"
    name = doc.get("preset", "confounded")
    if name not in dataset.PRESETS:
        raise ConfigError(f"unknown synthetic preset {name!r}; choose from {sorted(dataset.PRESETS)}")
    try:
        return dataset.PRESETS[name](**doc.get("params", {})), name
    except TypeError as exc:
        raise ConfigError(f"bad parameters for preset {name!r}: {exc}") from exc


def stage_cluster(ws: Workspace) -> None:
    cfg = ws.config
    data = load_data(ws)
    n = cfg.n_clusters or data.d
    seed = derive_seed(cfg.seed, "cluster")
    affinity = None
    if ws.has("cluster/affinity.bin"):
        affinity = load_affinity(ws.require("cluster/affinity.bin"))
        if affinity.m != data.m:
            affinity = None
    if affinity is None and cfg.dump_affinity and data.m <= cfg.max_cluster_samples:
        affinity = build_affinity(data, cfg.kernel)
        dump_affinity(affinity, ws.path("cluster/affinity.bin"))
        ws.record("cluster/affinity.bin")
    assign = spectral.cluster(data, n, cfg.kernel, seed=seed, restarts=cfg.kmeans_restarts,
                              cap=cfg.max_cluster_samples, affinity=affinity)
    ws.write_rows("cluster/labels.csv", ["row", "cluster"], enumerate(assign.labels.tolist()))
    ws.write_json("cluster/summary.json", {
        "n": n, "inertia": assign.inertia, "sizes": assign.sizes().tolist(),
        "eigenvalues": assign.eigenvalues[: min(10, n)].tolist(),
    })


def stage_corrupt(ws: Workspace) -> None:
    cfg = ws.config
    data = load_data(ws)
    for rate in cfg.corruption_rates:
        spec = CorruptionSpec(rate, derive_seed(cfg.seed, "corrupt", rate))
        cd = dataset.corrupt(data, spec)
        d = rate_dir(rate)
        ws.write_rows(f"{d}/corrupt/labels.csv", ["row", "treatment", "corrupted"],
                      [[i, int(t), int(f)] for i, (t, f) in enumerate(zip(cd.treatment, cd.corrupted))])
        ws.write_json(f"{d}/corrupt/manifest.json", dataset.corruption_manifest(cd, spec))


def resample_params(cfg: RunConfig, rate: float) -> ResampleParams:
    return replace(cfg.resample, epsilon=rate) if cfg.epsilon_from_rate else cfg.resample


def stage_resample(ws: Workspace) -> None:
    cfg = ws.config
    data = load_data(ws)
    assign = load_clusters(ws)
    for rate in cfg.corruption_rates:
        d = rate_dir(rate)
        cd = load_corrupted(ws, data, rate)
        params = resample_params(cfg, rate)
        targets = resample.class_targets(cd, cfg.subset_size)
        rplan = resample.plan(cd, assign, params, targets, replace=cfg.replace)
        proc = resample.draw_subset(cd, assign, rplan, derive_seed(cfg.seed, "draw", rate), replace=cfg.replace)
        raw = resample.random_subset(cd, int(targets.sum()), derive_seed(cfg.seed, "raw", rate))
        ws.write_json(f"{d}/resample/report.json", dict(
            rplan.to_dict(), params=asdict(params), coefficient=params.coefficient))
        _write_subset(ws, f"{d}/resample/processed_subset.csv", proc)
        _write_subset(ws, f"{d}/resample/raw_subset.csv", raw)


def _split(m: int, fraction: float, seed: int):
    order = np.random.default_rng(seed).permutation(m)
    n_val = int(round(m * fraction))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def stage_train(ws: Workspace) -> None:
    cfg = ws.config
    data = load_data(ws)
    for rate in cfg.corruption_rates:
        d = rate_dir(rate)
        cd = load_corrupted(ws, data, rate)
        rounds = cfg.rounds_clean if rate == 0 else cfg.rounds_corrupted
        bcfg = replace(cfg.boost, num_classes=data.d, rounds=rounds)
        summary = {"rounds": rounds}
        for kind in ("processed", "raw"):
            idx = load_subset_index(ws, f"{d}/resample/{kind}_subset.csv")
            sub = cd.subset(idx)
            tr, va = _split(sub.m, cfg.validation_fraction, derive_seed(cfg.seed, "split", rate, kind))
            X = gbm.Matrix(sub.continuous[tr], sub.discrete[tr])
            model = gbm.fit(X, sub.treatment[tr], bcfg)
            ws.write_text(f"{d}/train/model_{kind}.json", model.dumps() + "\n")
            entry = {"train_mlogloss": model.history[-1], "history": model.history,
                     "n_train": int(len(tr)), "n_validation": int(len(va))}
            if len(va):
                Pv = gbm.predict(model, gbm.Matrix(sub.continuous[va], sub.discrete[va]))
                entry["validation_mlogloss"] = gbm.mlogloss(gbm.one_hot(sub.treatment[va], data.d), Pv)
            summary[kind] = entry
            P = gbm.predict(model, data)
            ws.write_rows(f"{d}/train/predictions_{kind}.csv",
                          ["row"] + [f"p_{lab}" for lab in data.treatment_labels],
                          [[i] + [repr(float(v)) for v in row] for i, row in enumerate(P)])
        ws.write_json(f"{d}/train/summary.json", summary)


def stage_evaluate(ws: Workspace) -> None:
    cfg = ws.config
    data = load_data(ws)
    covs = cfg.covariates or list(data.schema.covariates)
    for rate in cfg.corruption_rates:
        d = rate_dir(rate)
        reports = {}
        for kind in ("processed", "raw"):
            P = load_predictions(ws, f"{d}/train/predictions_{kind}.csv")
            # authentic labels: evaluation always uses the uncorrupted data
            rep = evaluate.bias_report(data, P, covs)
            ws.write_json(f"{d}/evaluate/report_{kind}.json", rep.to_dict())
            reports[kind] = rep
        labelled = {"Processed data + boosting": reports["processed"],
                    "Original data + boosting": reports["raw"]}
        tables = []
        for pair in reports["processed"].pairs:
            names = tuple(data.treatment_labels[i] for i in pair)
            tables.append(evaluate.comparison_table(labelled, pair, covs, names))
        ws.write_text(f"{d}/evaluate/tables.txt", "\n".join(tables))
        summary = {}
        for pair in reports["processed"].pairs:
            sp, sr = reports["processed"].summary(pair), reports["raw"].summary(pair)
            summary["-".join(map(str, pair))] = {
                c: {"processed": sp[c][0], "raw": sr[c][0], "unweighted": sp[c][1]} for c in covs
            }
        ws.write_json(f"{d}/evaluate/summary.json", summary)


def _embed(ws: Workspace, sub: Dataset, groups, labels, perplexity: float, seed: int, rel: str, title: str):
    cfg = ws.config
    D = embed.mixed_distance(sub)
    perp = min(perplexity, sub.m - 1.0)
    params = replace(cfg.embed, perplexity=perp, seed=seed)
    emb = embed.run_embedding(D, params)
    embed.write_coords(ws.path(rel + ".csv"), sub.source, emb.coords, [labels[g] for g in groups])
    ws.record(rel + ".csv")
    ws.write_text(rel + ".svg", embed.svg_scatter(emb.coords, groups, labels, title))
    return {"m": sub.m, "perplexity": perp, "tau": D.tau, "initial_kl": emb.initial_kl,
            "final_kl": emb.final_kl, "kl_trace": emb.kl_trace}


def stage_embed(ws: Workspace) -> None:
    cfg = ws.config
    if not cfg.embed_enabled:
        return
    data = load_data(ws)
    assign = load_clusters(ws)
    idx = embed.sample_per_group(assign.labels, cfg.per_cluster, derive_seed(cfg.seed, "plot-clusters"))
    info = {"clusters": _embed(
        ws, data.subset(idx), assign.labels[idx], {k: f"cluster {k + 1}" for k in range(assign.n)},
        cfg.perplexity_clusters, derive_seed(cfg.seed, "tsne-clusters"), "embed/clusters", "Clusters")}
    ws.write_json("embed/summary.json", info)
    tlabels = {k: f"treatment {lab}" for k, lab in enumerate(data.treatment_labels)}
    for rate in cfg.corruption_rates:
        d = rate_dir(rate)
        cd = load_corrupted(ws, data, rate)
        info = {}
        for kind in ("raw", "processed"):
            sub = cd.subset(load_subset_index(ws, f"{d}/resample/{kind}_subset.csv"))
            pick = embed.sample_per_group(sub.treatment, cfg.per_treatment,
                                          derive_seed(cfg.seed, "plot", rate, kind))
            s = sub.subset(pick)
            info[kind] = _embed(ws, s, s.treatment, tlabels, cfg.perplexity_treatments,
                                derive_seed(cfg.seed, "tsne", rate, kind),
                                f"{d}/embed/treatments_{kind}", f"Treatments ({kind}, rate {rate:g})")
        ws.write_json(f"{d}/embed/summary.json", info)


def stage_bounds(ws: Workspace) -> None:
    cfg = ws.config
    data = load_data(ws)
    for rate in cfg.corruption_rates:
        d = rate_dir(rate)
        if data.pattern is None:
            ws.write_json(f"{d}/bounds/report.json",
                          {"available": False, "reason": "ground truth unavailable for non-synthetic data"})
            continue
        assign = load_clusters(ws)
        cd = load_corrupted(ws, data, rate)
        if assign.n != int(data.pattern.max()) + 1:
            ws.write_json(f"{d}/bounds/report.json",
                          {"available": False, "reason": "cluster count differs from pattern count"})
            continue
        inst = bounds.empirical_instance(data.pattern, data.treatment, cd.treatment, assign.labels, data.d)
        ws.write_json(f"{d}/bounds/report.json", {
            "available": True, "P": inst.P, "P_star": inst.P_star, "c": inst.c,
            "classes": bounds.class_report(inst),
        })


STAGE_FUNCS = {
    "ingest": stage_ingest, "cluster": stage_cluster, "corrupt": stage_corrupt,
    "resample": stage_resample, "train": stage_train, "evaluate": stage_evaluate,
    "embed": stage_embed, "bounds": stage_bounds,
}


class StageError(RobustPSError):
    def __init__(self, stage: str, cause: RobustPSError):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.exit_code = cause.exit_code


def _run(ws: Workspace, name: str) -> None:
    t0 = time.perf_counter()
    log.info("stage %s", name)
    try:
        STAGE_FUNCS[name](ws)
    except RobustPSError as exc:
        ws.manifest["failed_stage"] = name
        ws.save_manifest()
        raise StageError(name, exc) from exc
    ws.manifest["stages"][name] = {"seconds": round(time.perf_counter() - t0, 3)}
    ws.manifest.pop("failed_stage", None)
    ws.save_manifest()


def cmd_pipeline(config: RunConfig, out: str | Path | None = None) -> dict:
    ws = Workspace(out or config.out, config)
    ws.manifest["artifacts"] = {}
    ws.manifest["stages"] = {}
    for name in STAGES:
        _run(ws, name)
    return ws.manifest


def cmd_stage(name: str, config: RunConfig, out: str | Path | None = None,
              stage_input: str | Path | None = None) -> dict:
    if name not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {name!r}")
    ws = Workspace(out or config.out, config)
    if stage_input is not None:
        ws.copy_from(stage_input)
    _run(ws, name)
    return ws.manifest
